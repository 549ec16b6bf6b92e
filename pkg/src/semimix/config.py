"""Run configuration from flat ``section.key = value`` files.

Example::

    # Poisson INGARCH(1,1)
    model.form = linear
    model.a0 = 1
    model.a = 0.3
    model.b = 0.5
    family.kind = poisson
    experiment.seed = 2024
    experiment.replicates = 10000

Lists are comma separated. Compound jump laws are written as
``size:probability`` pairs, e.g. ``family.jumps = 1:0.5, 2:0.5``. Lines
starting with ``#`` or ``;`` are comments. Every problem found is collected
and reported together.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

from .errors import ConfigurationError, DomainError, InfeasibleDriftError, SemimixError
from .models import GARCH, INGARCH, IntensitySpec, Linear, Threshold, counterexample_spec, exponential_map, spec_drift_constants
from .seeds import CompoundPoisson, GaussianWithFloor, GaussianZeroMean, Poisson, ZeroInflatedPoisson

COMMANDS = ("simulate", "couple", "coalescence-lemma", "mixing-rate", "drift-check", "reconstruct", "counterexample")
NEEDS_DRIFT = ("couple", "coalescence-lemma", "mixing-rate", "drift-check")

KNOWN_KEYS = {
    "model": {"form", "mode", "a0", "a", "b", "lower", "upper", "inside", "outside", "contraction", "g_base", "g_height"},
    "family": {"kind", "pi", "jumps", "omega"},
    "experiment": {
        "kind", "seed", "replicates", "horizon", "burn_in", "n_grid", "gaps", "workers", "init_lambda",
        "paths", "steps", "probes", "rho_target",
    },
}

DEFAULTS = {
    "simulate": {"horizon": 1000, "replicates": 1},
    "couple": {"horizon": 200, "replicates": 1},
    "coalescence-lemma": {"horizon": 200, "replicates": 10000},
    "mixing-rate": {"horizon": None, "replicates": 2000},
    "drift-check": {"horizon": 1, "replicates": 10000},
    "reconstruct": {"horizon": 40, "replicates": 100},
    "counterexample": {"horizon": 10000, "replicates": 1},
}


@dataclass
class RunConfig:
    """Validated settings for one command."""

    command: str
    spec: IntensitySpec
    family: object
    seed: int
    replicates: int
    horizon: Optional[int]
    burn_in: Optional[int]
    n_grid: tuple
    gaps: tuple
    workers: Optional[int]
    out: Optional[str]
    fmt: str
    init_lambda: Optional[float]
    probes: int
    rho_target: float
    raw: dict = field(default_factory=dict)
    gmap: object = None

    def canonical(self) -> dict:
        """Settings that determine the data output (not workers or paths)."""
        return {
            "command": self.command,
            "settings": {k: self.raw[k] for k in sorted(self.raw) if not k.startswith("experiment.workers")},
            "seed": self.seed,
            "replicates": self.replicates,
            "horizon": self.horizon,
            "burn_in": self.burn_in,
        }

    def config_hash(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def read_settings(text: str) -> dict:
    """Parse flat key/value text into a dict of raw strings."""
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"), delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string("[root]\n" + text)
    except configparser.Error as exc:
        raise ConfigurationError(f"unreadable configuration: {exc}") from exc
    return {k.strip(): v.strip() for k, v in parser.items("root")}


class _Collector:
    def __init__(self, raw: dict):
        self.raw = raw
        self.problems = []

    def get(self, key, cast, default=None, required=False):
        if key not in self.raw:
            if required:
                self.problems.append(f"missing required key {key}")
            return default
        text = self.raw[key]
        try:
            return cast(text)
        except (TypeError, ValueError) as exc:
            self.problems.append(f"{key}: cannot parse {text!r} ({exc})")
            return default


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _ints(text: str) -> tuple:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _jumps(text: str) -> tuple:
    pairs = []
    for item in text.split(","):
        size, prob = item.split(":")
        pairs.append((int(size), float(prob)))
    return tuple(pairs)


def _build_family(c: _Collector):
    kind = c.get("family.kind", str, "poisson")
    try:
        if kind == "poisson":
            return Poisson()
        if kind == "zip":
            return ZeroInflatedPoisson(c.get("family.pi", float, required=True) or 1.0)
        if kind == "compound":
            return CompoundPoisson(c.get("family.jumps", _jumps, required=True) or ((1, 1.0),))
        if kind == "gaussian":
            return GaussianZeroMean()
        if kind == "gaussian-floor":
            return GaussianWithFloor(c.get("family.omega", float, required=True) or 1.0)
    except SemimixError as exc:
        c.problems.append(f"family: {exc}")
        return None
    c.problems.append(f"family.kind: unknown family {kind!r}")
    return None


def _drift_message(exc) -> str:
    text = str(exc)
    return text if text.startswith("infeasible drift") else f"infeasible drift: {text}"


def _build_spec(c: _Collector, command: str):
    if command == "counterexample":
        return _build_recursion(c, command)
    return _build_recursion(c, command), None


def _build_recursion(c: _Collector, command: str):
    if command == "counterexample":
        base = c.get("model.g_base", float, 0.2)
        height = c.get("model.g_height", float, 0.25)
        if not (0 <= base and height > 0 and base + height <= 0.5 and height < 0.5):
            c.problems.append("model.g_base/g_height: need 0 <= base, 0 < height, base + height <= 0.5")
            return None, None
        return counterexample_spec(exponential_map(base, height)), exponential_map(base, height)
    form = c.get("model.form", str, "linear")
    mode = c.get("model.mode", str, INGARCH)
    if mode not in (INGARCH, GARCH):
        c.problems.append(f"model.mode: expected ingarch or garch, got {mode!r}")
    contraction = c.get("model.contraction", _floats)
    try:
        if form == "linear":
            a0 = c.get("model.a0", float, required=True)
            a = c.get("model.a", _floats, required=True)
            b = c.get("model.b", _floats, required=True)
            if a0 is None or not a or not b:
                return None
            return IntensitySpec(Linear(a0, a, b), mode, contraction)
        if form == "threshold":
            lower = c.get("model.lower", float, required=True)
            upper = c.get("model.upper", float, required=True)
            inside = c.get("model.inside", _floats, required=True)
            outside = c.get("model.outside", _floats, required=True)
            if None in (lower, upper, inside, outside):
                return None
            return IntensitySpec(Threshold(lower, upper, inside, outside), mode, contraction)
        if form == "counterexample":
            return counterexample_spec()
    except InfeasibleDriftError as exc:
        c.problems.append(_drift_message(exc))
        return None
    except (SemimixError, ValueError) as exc:
        c.problems.append(f"model: {exc}")
        return None
    c.problems.append(f"model.form: unknown form {form!r}")
    return None


def build_config(command: str, raw: dict, overrides: Optional[dict] = None) -> RunConfig:
    """Validate raw settings plus command-line overrides.

    Raises:
        ConfigurationError: listing every problem found.
    """
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    c = _Collector(raw)
    if command not in COMMANDS:
        c.problems.append(f"unknown command {command!r}")
    for key in raw:
        section, _, name = key.partition(".")
        if section not in KNOWN_KEYS or name not in KNOWN_KEYS[section]:
            c.problems.append(f"unknown key {key}")
    kind = raw.get("experiment.kind")
    if kind is not None and kind != command:
        c.problems.append(f"experiment.kind is {kind!r} but the command is {command!r}")

    defaults = DEFAULTS.get(command, {"horizon": None, "replicates": 1})
    seed = overrides.get("seed", c.get("experiment.seed", int, 0))
    replicates = overrides.get("replicates", c.get("experiment.replicates", int, defaults["replicates"]))
    horizon = overrides.get("horizon", c.get("experiment.horizon", int, defaults["horizon"]))
    burn_in = c.get("experiment.burn_in", int)
    n_grid = c.get("experiment.n_grid", _ints, (1, 4, 9, 16, 25, 36, 49, 64))
    gaps = c.get("experiment.gaps", _floats, (0.05, 0.1, 0.2, 0.5))
    workers = overrides.get("workers", c.get("experiment.workers", int))
    init_lambda = c.get("experiment.init_lambda", float)
    probes = c.get("experiment.probes", int, 20)
    rho_target = c.get("experiment.rho_target", float, 0.5)
    fmt = overrides.get("fmt", "csv")

    if seed is not None and not (0 <= seed < 2**64):
        c.problems.append("seed must be a 64-bit unsigned integer")
    if replicates is not None and replicates < 1:
        c.problems.append("replicates must be positive")
    if command == "mixing-rate" and replicates is not None and replicates < 100:
        c.problems.append("mixing-rate needs at least 100 replicates")
    if horizon is not None and horizon < 1:
        c.problems.append("horizon must be positive")
    if burn_in is not None and burn_in < 0:
        c.problems.append("burn_in must be nonnegative")
    if n_grid and (min(n_grid) < 1 or list(n_grid) != sorted(set(n_grid))):
        c.problems.append("n_grid must be strictly increasing positive integers")
    if command == "mixing-rate" and n_grid and horizon is not None and horizon < max(n_grid):
        c.problems.append(f"horizon {horizon} is shorter than the largest lag {max(n_grid)}")
    if gaps and min(gaps) < 0:
        c.problems.append("gaps must be nonnegative")
    if workers is not None and workers < 1:
        c.problems.append("workers must be positive")
    if init_lambda is not None and init_lambda < 0:
        c.problems.append("init_lambda must be nonnegative")
    if probes is not None and probes < 1:
        c.problems.append("probes must be positive")
    if rho_target is not None and not (0 < rho_target < 1):
        c.problems.append("rho_target must lie in (0, 1)")
    if fmt not in ("csv", "json"):
        c.problems.append(f"format must be csv or json, got {fmt!r}")

    family = _build_family(c)
    spec, gmap = _build_spec(c, command)
    if spec is not None and family is not None:
        if command in NEEDS_DRIFT:
            try:
                spec_drift_constants(spec, family)
            except SemimixError as exc:
                c.problems.append(_drift_message(exc))
        if command == "coalescence-lemma":
            try:
                family.similarity_delta()
            except SemimixError as exc:
                c.problems.append(str(exc))

    if c.problems:
        raise ConfigurationError("; ".join(c.problems), c.problems)
    return RunConfig(
        command=command,
        spec=spec,
        family=family,
        seed=seed,
        replicates=replicates,
        horizon=horizon,
        burn_in=burn_in,
        n_grid=n_grid,
        gaps=gaps,
        workers=workers,
        out=overrides.get("out"),
        fmt=fmt,
        init_lambda=init_lambda,
        probes=probes,
        rho_target=rho_target,
        raw=dict(raw),
        gmap=gmap,
    )


def _num(x: float) -> str:
    return repr(float(x))


def model_settings(spec: IntensitySpec, family=None) -> dict:
    """Flat settings describing a model and seed family.

    Raises:
        DomainError: for user supplied recursions, which have no text form.
    """
    form = spec.form
    out = {}
    if isinstance(form, Linear):
        out["model.form"] = "linear"
        out["model.a0"] = _num(form.a0)
        out["model.a"] = ", ".join(_num(x) for x in form.a)
        out["model.b"] = ", ".join(_num(x) for x in form.b)
    elif isinstance(form, Threshold):
        out["model.form"] = "threshold"
        out["model.lower"] = _num(form.lower)
        out["model.upper"] = _num(form.upper)
        out["model.inside"] = ", ".join(_num(x) for x in form.inside)
        out["model.outside"] = ", ".join(_num(x) for x in form.outside)
    else:
        raise DomainError("only linear and threshold forms have a text representation")
    out["model.mode"] = spec.mode
    if spec.contraction is not None and tuple(spec.contraction) != tuple(form.contraction()):
        out["model.contraction"] = ", ".join(_num(x) for x in spec.contraction)
    if family is not None:
        if isinstance(family, ZeroInflatedPoisson):
            out["family.kind"] = "zip"
            out["family.pi"] = _num(family.pi)
        elif isinstance(family, CompoundPoisson):
            out["family.kind"] = "compound"
            out["family.jumps"] = ", ".join(f"{k}:{_num(p)}" for k, p in family.jumps)
        elif isinstance(family, Poisson):
            out["family.kind"] = "poisson"
        elif isinstance(family, GaussianWithFloor):
            out["family.kind"] = "gaussian-floor"
            out["family.omega"] = _num(family.omega)
        elif isinstance(family, GaussianZeroMean):
            out["family.kind"] = "gaussian"
        else:
            raise DomainError(f"unknown family {type(family).__name__}")
    return out


def format_settings(settings: dict) -> str:
    """Render settings as config-file text, one key per line."""
    return "".join(f"{k} = {settings[k]}\n" for k in sorted(settings))


def parse_model(text: str):
    """Model and family from config text: inverse of ``format_settings``."""
    cfg = build_config("simulate", read_settings(text))
    return cfg.spec, cfg.family
