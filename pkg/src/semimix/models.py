"""Intensity recursions, drift constants, simulation and reconstruction.

A chain state holds the ``p`` most recent stored observations and the ``q``
most recent intensities, newest first. One step computes the next intensity
``lambda_t = f(y_lags; lam_lags)``, draws ``Y_t ~ Q(lambda_t)`` from a uniform
and shifts both windows. In GARCH mode the stored observation is ``Y_t**2``.

Everything is vectorized over replicates: arrays of lags have shape
``(R, p)`` and ``(R, q)``, and each row only ever touches its own entries, so
results do not depend on batch composition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .contraction import contraction_coeffs
from .errors import (
    ConstructionError,
    ContractViolation,
    DomainError,
    InconsistentInputError,
    InfeasibleDriftError,
    ShapeError,
)
from .rng import open_uniforms
from .seeds import SeedFamily

INGARCH = "ingarch"
GARCH = "garch"


@dataclass(frozen=True)
class ModelOrder:
    p: int
    q: int

    def __post_init__(self):
        if self.p < 1 or self.q < 1:
            raise ShapeError(f"orders must be positive, got p={self.p}, q={self.q}")


@dataclass(frozen=True)
class Linear:
    """lambda = a0 + sum a_i y_{t-i} + sum b_j lambda_{t-j}."""

    a0: float
    a: tuple
    b: tuple

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(float(x) for x in np.atleast_1d(self.a)))
        object.__setattr__(self, "b", tuple(float(x) for x in np.atleast_1d(self.b)))
        coeffs = (self.a0,) + self.a + self.b
        if any(not (x >= 0) for x in coeffs):
            raise DomainError("linear coefficients must be nonnegative")

    @property
    def order(self) -> ModelOrder:
        return ModelOrder(len(self.a), len(self.b))

    def __call__(self, y, lam):
        out = np.full(y.shape[0], float(self.a0))
        for i, ai in enumerate(self.a):
            out = out + ai * y[:, i]
        for j, bj in enumerate(self.b):
            out = out + bj * lam[:, j]
        return out

    def contraction(self) -> tuple:
        return self.b

    def drift_bound(self):
        return self.a0, self.a, self.b


@dataclass(frozen=True)
class Threshold:
    """Two-regime recursion for p = q = 1.

    ``inside = (a, b, c)`` applies when ``lower <= y <= upper``, otherwise
    ``outside = (a', b', c')``.
    """

    lower: float
    upper: float
    inside: tuple
    outside: tuple

    def __post_init__(self):
        object.__setattr__(self, "inside", tuple(float(x) for x in self.inside))
        object.__setattr__(self, "outside", tuple(float(x) for x in self.outside))
        if len(self.inside) != 3 or len(self.outside) != 3:
            raise ShapeError("each regime needs (a, b, c)")
        if any(not (x >= 0) for x in self.inside + self.outside):
            raise DomainError("threshold coefficients must be nonnegative")
        if self.lower > self.upper:
            raise DomainError("lower threshold exceeds upper threshold")

    @property
    def order(self) -> ModelOrder:
        return ModelOrder(1, 1)

    def __call__(self, y, lam):
        y1 = y[:, 0]
        l1 = lam[:, 0]
        a, b, c = self.inside
        a2, b2, c2 = self.outside
        inside = (y1 >= self.lower) & (y1 <= self.upper)
        return np.where(inside, a + b * y1 + c * l1, a2 + b2 * y1 + c2 * l1)

    def contraction(self) -> tuple:
        return (max(self.inside[2], self.outside[2]),)

    def drift_bound(self):
        return (
            max(self.inside[0], self.outside[0]),
            (max(self.inside[1], self.outside[1]),),
            (max(self.inside[2], self.outside[2]),),
        )


@dataclass(frozen=True)
class Custom:
    """User supplied recursion with declared contraction constants.

    Args:
        func: ``func(y_lags, lam_lags)``. With ``vectorized=True`` it receives
            arrays of shape (R, p) and (R, q) and returns shape (R,);
            otherwise it is called once per row with 1-d arrays.
        p: number of observation lags.
        q: number of intensity lags.
        c: declared Lipschitz constants in the intensity lags.
        drift: optional dominating linear coefficients ``(a0, a, b)`` used for
            drift constants; without it no drift constants can be built.
    """

    func: Callable
    p: int
    q: int
    c: tuple
    drift: Optional[tuple] = None
    vectorized: bool = False

    @property
    def order(self) -> ModelOrder:
        return ModelOrder(self.p, self.q)

    def __call__(self, y, lam):
        if self.vectorized:
            return np.asarray(self.func(y, lam), dtype=float).reshape(y.shape[0])
        return np.array([float(self.func(y[r], lam[r])) for r in range(y.shape[0])])

    def contraction(self) -> tuple:
        return tuple(float(x) for x in np.atleast_1d(self.c))

    def drift_bound(self):
        if self.drift is None:
            raise InfeasibleDriftError("custom form declares no dominating linear drift bound")
        a0, a, b = self.drift
        return float(a0), tuple(np.atleast_1d(a).astype(float)), tuple(np.atleast_1d(b).astype(float))


@dataclass(frozen=True)
class IntensitySpec:
    """Model recursion plus the way observations enter it.

    Attributes:
        form: a ``Linear``, ``Threshold`` or ``Custom`` recursion.
        mode: ``"ingarch"`` (observations enter as levels) or ``"garch"``
            (observations enter squared and lambda is a variance).
        contraction: c_1..c_q; derived from the form when omitted.
    """

    form: object
    mode: str = INGARCH
    contraction: Optional[tuple] = None

    def __post_init__(self):
        if self.mode not in (INGARCH, GARCH):
            raise DomainError(f"unknown mode {self.mode!r}")
        c = self.form.contraction() if self.contraction is None else self.contraction
        c = tuple(float(x) for x in np.atleast_1d(c))
        if len(c) != self.q:
            raise ShapeError(f"need {self.q} contraction constants, got {len(c)}")
        if any(not (x >= 0) for x in c):
            raise DomainError("contraction constants must be nonnegative")
        if sum(c) >= 1:
            raise InfeasibleDriftError(f"contraction constants sum to {sum(c):g} >= 1")
        object.__setattr__(self, "contraction", c)

    @property
    def order(self) -> ModelOrder:
        return self.form.order

    @property
    def p(self) -> int:
        return self.form.order.p

    @property
    def q(self) -> int:
        return self.form.order.q

    def store(self, y):
        """Observation as it is kept in the lag window."""
        return np.square(y) if self.mode == GARCH else np.asarray(y, dtype=float)

    def raw_intensity(self, y_lags, lam_lags) -> np.ndarray:
        return self.form(y_lags, lam_lags)

    def intensity(self, y_lags, lam_lags) -> np.ndarray:
        """Vectorized next intensity for lag arrays of shape (R, p), (R, q)."""
        out = self.form(y_lags, lam_lags)
        if isinstance(self.form, Custom) and np.any(~(out >= 0)):
            bad = int(np.argmax(~(out >= 0)))
            raise ContractViolation(
                f"custom intensity returned {out[bad]!r} for y={y_lags[bad].tolist()}, lambda={lam_lags[bad].tolist()}"
            )
        return out

    def drift_bound(self):
        return self.form.drift_bound()


def _lag_arrays(spec: IntensitySpec, y_lags, lam_lags):
    y = np.asarray(y_lags, dtype=float)
    lam = np.asarray(lam_lags, dtype=float)
    if y.ndim == 1:
        y = y[None, :]
    if lam.ndim == 1:
        lam = lam[None, :]
    if y.shape[1] != spec.p or lam.shape[1] != spec.q or y.shape[0] != lam.shape[0]:
        raise ShapeError(f"expected {spec.p} observation lags and {spec.q} intensity lags")
    return y, lam


def evaluate_intensity(spec: IntensitySpec, y_lags, lam_lags) -> float:
    """Next intensity f(y_{t-1..t-p}; lambda_{t-1..t-q}) for one state."""
    y, lam = _lag_arrays(spec, y_lags, lam_lags)
    if y.shape[0] != 1:
        raise ShapeError("evaluate_intensity takes a single state")
    if np.any(~(lam >= 0)):
        raise DomainError("intensity lags must be nonnegative")
    return float(spec.intensity(y, lam)[0])


@dataclass(frozen=True)
class ChainState:
    """Lag windows of one chain, newest first."""

    y_lags: tuple
    lam_lags: tuple

    def __post_init__(self):
        object.__setattr__(self, "y_lags", tuple(float(v) for v in self.y_lags))
        object.__setattr__(self, "lam_lags", tuple(float(v) for v in self.lam_lags))
        if any(not (v >= 0) for v in self.lam_lags):
            raise DomainError("intensity lags must be nonnegative")

    @classmethod
    def zero(cls, spec: IntensitySpec) -> "ChainState":
        return cls((0.0,) * spec.p, (0.0,) * spec.q)

    def arrays(self, spec: IntensitySpec):
        return _lag_arrays(spec, self.y_lags, self.lam_lags)


def _state_rows(spec, state: ChainState, rows: int = 1):
    y, lam = state.arrays(spec)
    return np.repeat(y, rows, axis=0), np.repeat(lam, rows, axis=0)


# --------------------------------------------------------------------------
# semi-contractivity probe


@dataclass(frozen=True)
class ProbeResult:
    ok: bool
    witness: Optional[dict] = None
    probes: int = 0


def semicontractive_probe(spec: IntensitySpec, probes: int, rng: np.random.Generator) -> ProbeResult:
    """Search random inputs for a violation of the declared Lipschitz bound.

    Observation lags mix nonnegative integers with reals of either sign;
    intensity pairs mix small perturbations with unrelated values.
    """
    if probes < 1:
        raise DomainError("probe count must be positive")
    p, q = spec.p, spec.q
    ints = rng.integers(0, 41, size=(probes, p)).astype(float)
    reals = rng.uniform(-40.0, 40.0, size=(probes, p))
    y = np.where(rng.random((probes, 1)) < 0.5, ints, reals)
    lam = rng.exponential(10.0, size=(probes, q)) * (rng.random((probes, q)) > 0.05)
    near = np.abs(lam + rng.normal(0.0, 0.5, size=(probes, q)))
    far = rng.exponential(10.0, size=(probes, q))
    lam2 = np.where(rng.random((probes, 1)) < 0.5, near, far)
    c = np.asarray(spec.contraction)
    f1 = spec.raw_intensity(y, lam)
    f2 = spec.raw_intensity(y, lam2)
    lhs = np.abs(f1 - f2)
    rhs = np.abs(lam - lam2) @ c
    tol = 1e-10 * (1.0 + np.maximum(np.abs(f1), np.abs(f2)))
    bad = np.flatnonzero(lhs > rhs + tol)
    if bad.size == 0:
        return ProbeResult(True, None, probes)
    r = int(bad[0])
    witness = {
        "y_lags": y[r].tolist(),
        "lam_lags": lam[r].tolist(),
        "lam_lags_prime": lam2[r].tolist(),
        "difference": float(lhs[r]),
        "bound": float(rhs[r]),
    }
    return ProbeResult(False, witness, probes)


# --------------------------------------------------------------------------
# drift constants


@dataclass(frozen=True)
class DriftConstants:
    """Weights of the linear Lyapunov map and its geometric drift rate.

    ``V(x) = sum_{i=1}^{p-1} a_i y_{t-i} + sum_{j=0}^{q-1} b_j lambda_{t-j}``
    with ``b_0 = 1`` satisfies ``E V(X_t) <= kappa V(X_{t-1}) + a0``.
    """

    a: tuple
    b: tuple
    kappa: float
    a0: float
    epsilon: float
    mean_factor: float = 1.0
    ratios: dict = field(default_factory=dict)
    inequalities: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return len(self.a) + 1

    @property
    def q(self) -> int:
        return len(self.b)

    def V(self, y_part, lam_part):
        """Evaluate V on arrays of shape (R, p-1) and (R, q)."""
        y_part = np.atleast_2d(np.asarray(y_part, dtype=float))
        lam_part = np.atleast_2d(np.asarray(lam_part, dtype=float))
        out = np.zeros(lam_part.shape[0])
        for i, ai in enumerate(self.a):
            out = out + ai * y_part[:, i]
        for j, bj in enumerate(self.b):
            out = out + bj * lam_part[:, j]
        return out


def drift_constants(a0_bar, a_bar, b_bar, family: Optional[SeedFamily] = None) -> DriftConstants:
    """Construct Lyapunov weights and the drift rate kappa.

    The coefficients describe a dominating linear recursion
    ``lambda_t <= a0_bar + sum a_bar_i Y_{t-i} + sum b_bar_j lambda_{t-j}``.
    With ``E[stored Y | lambda] <= m lambda + k`` for the family, the
    construction runs on ``m * a_bar`` and rescales the observation weights
    by ``1/m``; for m = 1 this is the plain construction.

    Args:
        a0_bar: intercept.
        a_bar: observation coefficients a_bar_1..a_bar_p.
        b_bar: intensity coefficients b_bar_1..b_bar_q.
        family: observation law; defaults to m = 1, k = 0.

    Returns:
        DriftConstants with kappa the largest coefficient ratio.

    Raises:
        InfeasibleDriftError: if ``m * sum(a_bar) + sum(b_bar) >= 1``.
        ConstructionError: if a constructed weight is nonpositive or the
            resulting kappa is not below 1.
    """
    a_bar = tuple(float(x) for x in np.atleast_1d(a_bar))
    b_bar = tuple(float(x) for x in np.atleast_1d(b_bar))
    p, q = len(a_bar), len(b_bar)
    if p < 1 or q < 1:
        raise ShapeError("need at least one observation and one intensity coefficient")
    if any(x < 0 for x in a_bar + b_bar) or a0_bar < 0:
        raise DomainError("drift coefficients must be nonnegative")
    m, k = family.mean_bound() if family is not None else (1.0, 0.0)
    if m <= 0:
        raise ConstructionError("observation mean factor must be positive", {"mean_factor": m})
    ea = tuple(m * x for x in a_bar)
    total = sum(ea) + sum(b_bar)
    if total >= 1:
        raise InfeasibleDriftError(f"infeasible drift: coefficient sum {total:g} >= 1")
    eps = (1.0 - total) / 4.0

    # weights on the effective (mean-scaled) observation scale
    wa = [0.0] * p  # wa[i] is a_i for i = 1..p-1 (index 0 unused)
    wb = [0.0] * q  # wb[j] is b_j for j = 0..q-1
    wb[0] = 1.0
    if q >= 2:
        wb[1] = sum(b_bar) - b_bar[0] + eps
        gap_b = eps / (2 * (q - 2)) if q > 2 else 0.0
        for j in range(2, q):
            wb[j] = wb[j - 1] - b_bar[j - 1] - gap_b
    if p >= 2:
        wa[1] = sum(ea) - ea[0] + eps
        gap_a = eps / (2 * (p - 2)) if p > 2 else 0.0
        for i in range(2, p):
            wa[i] = wa[i - 1] - ea[i - 1] - gap_a

    ineq = {}
    lead = ea[0] + b_bar[0] + (wa[1] if p >= 2 else 0.0) + (wb[1] if q >= 2 else 0.0)
    ineq["lambda_lead"] = (lead, wb[0])
    for j in range(2, q):
        ineq[f"lambda_lag_{j}"] = (b_bar[j - 1] + wb[j], wb[j - 1])
    if q >= 2:
        ineq["lambda_last"] = (b_bar[q - 1], wb[q - 1])
    for i in range(2, p):
        ineq[f"y_lag_{i}"] = (ea[i - 1] + wa[i], wa[i - 1])
    if p >= 2:
        ineq["y_last"] = (ea[p - 1], wa[p - 1])

    diagnostics = {"epsilon": eps, "a": wa[1:], "b": wb, "mean_factor": m}
    if any(w <= 0 for w in wa[1:] + wb):
        raise ConstructionError("constructed Lyapunov weight is not positive", diagnostics)
    ratios = {name: lhs / rhs for name, (lhs, rhs) in ineq.items()}
    kappa = max(ratios.values())
    if not kappa < 1:
        raise ConstructionError(f"constructed kappa {kappa:g} is not below 1", diagnostics)
    a0 = float(a0_bar) + k * (ea[0] / m + (wa[1] / m if p >= 2 else 0.0))
    return DriftConstants(
        a=tuple(w / m for w in wa[1:]),
        b=tuple(wb),
        kappa=float(kappa),
        a0=a0,
        epsilon=eps,
        mean_factor=m,
        ratios=ratios,
        inequalities={name: (lhs, rhs, lhs < rhs) for name, (lhs, rhs) in ineq.items()},
    )


def spec_drift_constants(spec: IntensitySpec, family: SeedFamily) -> DriftConstants:
    a0, a, b = spec.drift_bound()
    return drift_constants(a0, a, b, family)


def drift_inequalities(drift: DriftConstants) -> dict:
    """Named strict inequalities behind kappa: name -> True when lhs < rhs."""
    return {name: bool(lhs < rhs) for name, (lhs, rhs, _) in drift.inequalities.items()}


def lyapunov_level(drift: DriftConstants, spec: IntensitySpec, y_lags, lam_lags) -> np.ndarray:
    """V of the state that drives the next draw.

    For lag windows ``(y_{t-1..t-p}, lambda_{t-1..t-q})`` this is
    ``sum a_i y_{t-i} + b_0 lambda_t + sum_{j>=1} b_j lambda_{t-j}`` with
    ``lambda_t = f(lags)``.
    """
    nxt = spec.intensity(y_lags, lam_lags)
    out = drift.b[0] * nxt
    for i, ai in enumerate(drift.a):
        out = out + ai * y_lags[:, i]
    for j in range(1, len(drift.b)):
        out = out + drift.b[j] * lam_lags[:, j - 1]
    return out


@dataclass(frozen=True)
class DriftProbe:
    y_part: tuple
    lam_part: tuple
    level: float
    mean: float
    se: float
    bound: float
    ok: bool


def drift_probe_states(spec: IntensitySpec, count: int, rng: np.random.Generator):
    """Probe states spread over several orders of magnitude of intensity."""
    scales = np.array([0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0])
    states = []
    for _ in range(count):
        lam = rng.choice(scales, size=spec.q) * rng.uniform(0.5, 1.5, size=spec.q)
        y = np.round(rng.choice(scales, size=spec.p - 1) * rng.uniform(0.5, 1.5, size=spec.p - 1))
        states.append((tuple(float(v) for v in y), tuple(float(v) for v in lam)))
    return states


def drift_check(
    spec: IntensitySpec,
    family: SeedFamily,
    drift: DriftConstants,
    probes,
    replicates: int,
    rng: np.random.Generator,
    sigmas: float = 3.0,
) -> list:
    """Monte Carlo check of E[V(X_t) | X_{t-1} = x] <= kappa V(x) + a0.

    Each probe ``x = (y_part, lam_part)`` holds the p-1 latest stored
    observations before the draw and the q latest intensities, the first of
    which drives the draw.
    """
    out = []
    for y_part, lam_part in probes:
        y_part = np.asarray(y_part, dtype=float)
        lam_part = np.asarray(lam_part, dtype=float)
        u = open_uniforms(rng, replicates)
        lam_now = np.full(replicates, lam_part[0])
        y_new = spec.store(family.sample_batch(lam_now, u))
        y_lags = np.column_stack([y_new] + [np.full(replicates, v) for v in y_part])
        lam_lags = np.tile(lam_part, (replicates, 1))
        nxt = spec.intensity(y_lags, lam_lags)
        new_y = y_lags[:, : spec.p - 1]
        new_lam = np.column_stack([nxt, lam_lags[:, : spec.q - 1]])
        values = drift.V(new_y, new_lam)
        level = float(drift.V(y_part[None, :], lam_part[None, :])[0])
        mean = float(values.mean())
        se = float(values.std(ddof=1) / math.sqrt(replicates))
        bound = drift.kappa * level + drift.a0
        out.append(DriftProbe(tuple(y_part), tuple(lam_part), level, mean, se, bound, mean <= bound + sigmas * se))
    return out


# --------------------------------------------------------------------------
# simulation


@dataclass(frozen=True)
class SimulatedPath:
    """Observations and the intensities that generated them (t = 1..n)."""

    y: np.ndarray
    lam: np.ndarray
    final: ChainState


def simulate_batch(spec: IntensitySpec, family: SeedFamily, y_lags, lam_lags, uniforms, record: bool = True):
    """Advance R chains through ``uniforms.shape[1]`` steps.

    Args:
        y_lags: (R, p) stored observations, newest first.
        lam_lags: (R, q) intensities, newest first.
        uniforms: (R, n) variates in (0, 1), one per step.
        record: keep the full (R, n) paths when true.

    Returns:
        ``(Y, Lambda, y_lags, lam_lags)``; the paths are None without record.
    """
    y_lags = np.array(y_lags, dtype=float, copy=True)
    lam_lags = np.array(lam_lags, dtype=float, copy=True)
    R, n = uniforms.shape
    ys = np.empty((R, n)) if record else None
    lams = np.empty((R, n)) if record else None
    for t in range(n):
        lam = spec.intensity(y_lags, lam_lags)
        y = family.sample_batch(lam, uniforms[:, t])
        y_lags[:, 1:] = y_lags[:, :-1]
        y_lags[:, 0] = spec.store(y)
        lam_lags[:, 1:] = lam_lags[:, :-1]
        lam_lags[:, 0] = lam
        if record:
            ys[:, t] = y
            lams[:, t] = lam
    return ys, lams, y_lags, lam_lags


def simulate_path(spec: IntensitySpec, family: SeedFamily, n: int, init: ChainState, rng: np.random.Generator) -> SimulatedPath:
    """Simulate ``n`` steps from ``init`` by inverse transform on ``rng``."""
    if n < 1:
        raise DomainError("path length must be positive")
    y0, l0 = init.arrays(spec)
    u = open_uniforms(rng, (1, n))
    ys, lams, yl, ll = simulate_batch(spec, family, y0, l0, u)
    return SimulatedPath(ys[0], lams[0], ChainState(tuple(yl[0]), tuple(ll[0])))


def default_burn_in(spec: IntensitySpec) -> int:
    return 1000 * (spec.p + spec.q)


def check_drift_feasible(spec: IntensitySpec, family: SeedFamily) -> DriftConstants:
    return spec_drift_constants(spec, family)


def stationary_batch(spec: IntensitySpec, family: SeedFamily, uniforms):
    """Terminal lag arrays after running R chains from the zero state."""
    check_drift_feasible(spec, family)
    R = uniforms.shape[0]
    y0 = np.zeros((R, spec.p))
    l0 = np.zeros((R, spec.q))
    _, _, yl, ll = simulate_batch(spec, family, y0, l0, uniforms, record=False)
    return yl, ll


def stationary_draw(spec: IntensitySpec, family: SeedFamily, burn_in: Optional[int], rng: np.random.Generator) -> ChainState:
    """Approximate draw from the stationary law by burn-in from zero."""
    check_drift_feasible(spec, family)
    burn_in = default_burn_in(spec) if burn_in is None else burn_in
    if burn_in < 0:
        raise DomainError("burn-in must be nonnegative")
    if burn_in == 0:
        return ChainState.zero(spec)
    yl, ll = stationary_batch(spec, family, open_uniforms(rng, (1, burn_in)))
    return ChainState(tuple(yl[0]), tuple(ll[0]))


# --------------------------------------------------------------------------
# forward reconstruction and the non-mixing example


def reconstruct_intensity(spec: IntensitySpec, y_history, lam_prior_bound):
    """Rebuild the intensity from observations alone.

    The history lists raw observations oldest first: ``Y_{1-p}, ..., Y_{k-1}``
    (length ``k + p - 1``). Starting from zero intensity lags the recursion is
    run forward ``k`` times, which yields an estimate of ``lambda_k``.

    Args:
        spec: model recursion.
        y_history: raw observations, oldest first.
        lam_prior_bound: bounds on the unknown intensities
            ``lambda_0, ..., lambda_{1-q}`` (scalar or length q).

    Returns:
        ``(estimate, bound)`` where ``bound`` limits the absolute error.
        With ``k = 0`` the estimate is the zero initialisation itself.
    """
    hist = np.asarray(y_history, dtype=float).ravel()
    p, q = spec.p, spec.q
    if hist.size < p - 1:
        raise ShapeError(f"history needs at least {p - 1} observations")
    prior = np.broadcast_to(np.asarray(lam_prior_bound, dtype=float), (q,))
    if np.any(prior < 0):
        raise DomainError("prior bounds must be nonnegative")
    k = hist.size - p + 1
    stored = spec.store(hist)
    lam = np.zeros((1, q))
    est = 0.0
    for m in range(1, k + 1):
        # observations Y_{m-1}, ..., Y_{m-p} sit at positions m+p-2 down to m-1
        y = stored[m - 1 : m + p - 1][::-1][None, :]
        est = float(spec.intensity(y, lam)[0])
        lam = np.roll(lam, 1, axis=1)
        lam[0, 0] = est
    table = contraction_coeffs(spec.contraction, k + 1)
    bound = float(table.d[k] @ prior)
    return est, bound


@dataclass(frozen=True)
class RecoverableMap:
    """Strictly increasing g with range inside [low, high) and its inverse."""

    g: Callable
    g_inv: Callable
    low: float
    high: float
    lipschitz: float


def exponential_map(base: float = 0.2, height: float = 0.25) -> RecoverableMap:
    """g(l) = base + height * (1 - exp(-l))."""

    def g(lam):
        return base + height * -np.expm1(-np.asarray(lam, dtype=float))

    def g_inv(v):
        return -np.log1p(-(np.asarray(v, dtype=float) - base) / height)

    return RecoverableMap(g, g_inv, base, base + height, height)


def counterexample_spec(gmap: Optional[RecoverableMap] = None) -> IntensitySpec:
    """INGARCH(1,1) recursion f(y; l) = y/2 + g(l), which never forgets its past."""
    gmap = gmap or exponential_map()

    def func(y, lam):
        return 0.5 * y[:, 0] + gmap.g(lam[:, 0])

    form = Custom(func, 1, 1, (gmap.lipschitz,), drift=(gmap.high, (0.5,), (0.0,)), vectorized=True)
    return IntensitySpec(form)


def counterexample_recover(gmap: RecoverableMap, lam_t: float):
    """Recover (Y_{t-1}, lambda_{t-1}) from lambda_t = Y_{t-1}/2 + g(lambda_{t-1})."""
    if not (lam_t >= 0):
        raise DomainError("intensity must be nonnegative")
    y = math.floor(2.0 * lam_t)
    rest = lam_t - y / 2.0
    # the sum y/2 + g(l) is rounded, so allow a few ulps at the ends of the range
    slack = 8.0 * np.finfo(float).eps * (1.0 + lam_t)
    if gmap.low - slack <= rest < gmap.low:
        rest = gmap.low
    if not (gmap.low <= rest < gmap.high):
        raise InconsistentInputError(f"residual {rest!r} lies outside the range of g")
    return int(y), float(gmap.g_inv(rest))
