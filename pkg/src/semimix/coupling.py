"""Two versions of the process driven by one shared uniform per step.

At step t both chains compute their next intensities. A single uniform u is
drawn. If ``u`` is at most the overlap of the two observation laws, both
chains receive ``F^{-1}(u)``, where F is the cumulative distribution of the
pointwise minimum of the two pmfs/densities (total mass = the overlap).
Otherwise each chain inverts its own excess distribution at ``u - overlap``.
Each chain on its own is therefore an exact draw from its law, and the two
draws agree with the largest possible probability.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .models import ChainState, IntensitySpec
from .rng import open_uniforms
from .seeds import SeedFamily

SNAP_GAP = 1e-12


@dataclass(frozen=True)
class CoupleStepOutcome:
    y: float
    y_prime: float
    hit: bool
    overlap: float


def maximal_couple_draw(family: SeedFamily, lam: float, lam2: float, u: float) -> CoupleStepOutcome:
    """Coupled pair of draws from Q(lam) and Q(lam2) for a shared uniform u."""
    d = family.couple_batch(np.array([lam], dtype=float), np.array([lam2], dtype=float), np.array([u], dtype=float))
    return CoupleStepOutcome(float(d.y[0]), float(d.y_prime[0]), bool(d.hit[0]), float(d.overlap[0]))


@dataclass(frozen=True)
class CoupledState:
    """Both lag windows plus the history of hit flags."""

    chain_a: ChainState
    chain_b: ChainState
    t: int = 0
    hits: tuple = ()
    gap: float = 0.0


@dataclass
class BatchCoupling:
    """Per-replicate summaries of a batch of coupled runs.

    Attributes:
        last_miss: last step (1-based) whose draws differed, 0 if none.
        first_miss: first step whose draws differed, 0 if none.
        gap_sum: sum over executed steps of |lambda_t - lambda'_t|.
        steps_run: number of steps each row actually executed before it
            was retired (coalesced exactly, or stopped at a miss).
        record: full per-step arrays when requested.
    """

    last_miss: np.ndarray
    first_miss: np.ndarray
    gap_sum: np.ndarray
    steps_run: np.ndarray
    final: tuple
    record: Optional[dict] = None


def couple_batch(
    spec: IntensitySpec,
    family: SeedFamily,
    y_a,
    lam_a,
    y_b,
    lam_b,
    uniforms,
    *,
    stop_on_miss: bool = False,
    record: bool = False,
    observer=None,
) -> BatchCoupling:
    """Run R coupled pairs for ``uniforms.shape[1]`` steps.

    Rows whose two lag windows become identical are retired early because
    every later draw would hit; with ``record=True`` or an ``observer`` all
    rows run to the end. For continuous laws, a pair with ``p`` straight hits
    and an intensity window gap below ``SNAP_GAP`` is merged so later draws
    coincide.

    Args:
        observer: optional callable ``observer(t, hit, y_a, lam_a, y_b, lam_b)``
            invoked with full arrays after every step t = 1..H.
    """
    ya = np.array(y_a, dtype=float, copy=True)
    la = np.array(lam_a, dtype=float, copy=True)
    yb = np.array(y_b, dtype=float, copy=True)
    lb = np.array(lam_b, dtype=float, copy=True)
    R, H = uniforms.shape
    p = spec.p
    last_miss = np.zeros(R, dtype=np.int64)
    first_miss = np.zeros(R, dtype=np.int64)
    gap_sum = np.zeros(R)
    steps_run = np.zeros(R, dtype=np.int64)
    run = np.zeros(R, dtype=np.int64)
    rec = None
    if record:
        rec = {
            key: np.zeros((R, H), dtype=bool if key == "hit" else float)
            for key in ("y", "y_prime", "hit", "lambda", "lambda_prime", "gap")
        }
    act = np.arange(R)
    for t in range(H):
        if act.size == 0:
            break
        ya_act, la_act, yb_act, lb_act = ya[act], la[act], yb[act], lb[act]
        nxt_a = spec.intensity(ya_act, la_act)
        nxt_b = spec.intensity(yb_act, lb_act)
        draw = family.couple_batch(nxt_a, nxt_b, uniforms[act, t])
        hit = draw.hit
        miss_rows = act[~hit]
        last_miss[miss_rows] = t + 1
        first_miss[miss_rows] = np.where(first_miss[miss_rows] == 0, t + 1, first_miss[miss_rows])
        gap_sum[act] += np.abs(nxt_a - nxt_b)
        steps_run[act] = t + 1
        run[act] = np.where(hit, run[act] + 1, 0)

        ya_act = np.roll(ya_act, 1, axis=1)
        ya_act[:, 0] = spec.store(draw.y)
        yb_act = np.roll(yb_act, 1, axis=1)
        yb_act[:, 0] = spec.store(draw.y_prime)
        la_act = np.roll(la_act, 1, axis=1)
        la_act[:, 0] = nxt_a
        lb_act = np.roll(lb_act, 1, axis=1)
        lb_act[:, 0] = nxt_b
        window_gap = np.abs(la_act - lb_act).sum(axis=1)

        if not family.discrete:
            snap = (run[act] >= p) & (window_gap < SNAP_GAP)
            yb_act = np.where(snap[:, None], ya_act, yb_act)
            lb_act = np.where(snap[:, None], la_act, lb_act)

        ya[act], la[act], yb[act], lb[act] = ya_act, la_act, yb_act, lb_act
        if observer is not None:
            observer(t + 1, hit, ya, la, yb, lb)
        if record:
            rec["y"][act, t] = draw.y
            rec["y_prime"][act, t] = draw.y_prime
            rec["hit"][act, t] = hit
            rec["lambda"][act, t] = nxt_a
            rec["lambda_prime"][act, t] = nxt_b
            rec["gap"][act, t] = window_gap
        if record or observer is not None:
            continue
        done = np.all(ya_act == yb_act, axis=1) & np.all(la_act == lb_act, axis=1)
        if stop_on_miss:
            done |= ~hit
        act = act[~done]
    return BatchCoupling(last_miss, first_miss, gap_sum, steps_run, (ya, la, yb, lb), rec)


def first_coalescence(hits) -> Optional[int]:
    """Smallest n such that every step from n to the end hit, or None."""
    hits = np.asarray(hits, dtype=bool)
    if hits.size == 0 or not hits[-1]:
        return None
    misses = np.flatnonzero(~hits)
    return 1 if misses.size == 0 else int(misses[-1]) + 2


@dataclass
class CouplingLog:
    """Per-step record of one coupled run (steps are numbered from 1)."""

    y: np.ndarray
    y_prime: np.ndarray
    hit: np.ndarray
    lam: np.ndarray
    lam_prime: np.ndarray
    gap: np.ndarray
    final: CoupledState
    first_coalescence: Optional[int] = field(default=None)

    @property
    def t(self) -> np.ndarray:
        return np.arange(1, self.hit.size + 1)

    def rows(self):
        for i in range(self.hit.size):
            yield (
                i + 1,
                self.y[i],
                self.y_prime[i],
                bool(self.hit[i]),
                self.lam[i],
                self.lam_prime[i],
                self.gap[i],
            )


def coupled_step(state: CoupledState, spec: IntensitySpec, family: SeedFamily, u: float) -> CoupledState:
    """Advance both chains by one shared-uniform step."""
    ya, la = state.chain_a.arrays(spec)
    yb, lb = state.chain_b.arrays(spec)
    out = couple_batch(spec, family, ya, la, yb, lb, np.array([[u]], dtype=float), record=True)
    ya, la, yb, lb = out.final
    return CoupledState(
        ChainState(tuple(ya[0]), tuple(la[0])),
        ChainState(tuple(yb[0]), tuple(lb[0])),
        state.t + 1,
        state.hits + (bool(out.record["hit"][0, 0]),),
        float(out.record["gap"][0, 0]),
    )


def run_coupled(
    init_a: ChainState,
    init_b: ChainState,
    spec: IntensitySpec,
    family: SeedFamily,
    horizon: int,
    rng: np.random.Generator,
) -> CouplingLog:
    """Run one coupled pair for ``horizon`` steps and log every step."""
    if horizon < 1:
        raise ValueError("horizon must be positive")
    u = open_uniforms(rng, (1, horizon))
    return run_coupled_uniforms(init_a, init_b, spec, family, u[0])


def run_coupled_uniforms(init_a, init_b, spec, family, uniforms) -> CouplingLog:
    """As ``run_coupled`` with the step uniforms supplied explicitly."""
    ya, la = init_a.arrays(spec)
    yb, lb = init_b.arrays(spec)
    u = np.asarray(uniforms, dtype=float)[None, :]
    out = couple_batch(spec, family, ya, la, yb, lb, u, record=True)
    rec = {k: v[0] for k, v in out.record.items()}
    fa, fla, fb, flb = out.final
    hits = rec["hit"]
    final = CoupledState(
        ChainState(tuple(fa[0]), tuple(fla[0])),
        ChainState(tuple(fb[0]), tuple(flb[0])),
        hits.size,
        tuple(bool(h) for h in hits),
        float(rec["gap"][-1]),
    )
    return CouplingLog(
        rec["y"], rec["y_prime"], hits, rec["lambda"], rec["lambda_prime"], rec["gap"], final, first_coalescence(hits)
    )


def absorption_violation(log: CouplingLog, p: int) -> Optional[int]:
    """First step that missed after p straight hits with a zero gap, if any."""
    run = 0
    absorbed = False
    for i, h in enumerate(log.hit):
        if absorbed and not h:
            return i + 1
        run = run + 1 if h else 0
        if run >= p and log.gap[i] == 0:
            absorbed = True
    return None
