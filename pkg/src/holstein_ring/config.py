"""Experiment configuration files: ``key = value`` lines, ``#`` comments.

Physics parameters (N, J, g, phi, F, M) must be given explicitly; numerical
knobs fall back to the defaults in :data:`DEFAULTS`. :func:`format_config`
writes every field in a fixed order, so formatting a parsed canonical file
reproduces it exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
import math

from .lattice import ModelParams, BRANCHES

EXPERIMENTS = (
    "m-convergence",
    "heom-compare",
    "broad-packet",
    "narrow-packet",
    "energy-balance",
    "strong-coupling",
    "strong-field",
    "sigma-scan",
)

REQUIRED = ("experiment", "N", "J", "g", "phi", "F", "M")

# key -> default for the optional knobs, in file order
DEFAULTS = {
    "omega0": 1.0,
    "branch": "optical",
    "sigma0": None,  # None: two-site initial state
    "dt": None,  # None: t_B/2000, or 0.002/omega0 when F = 0
    "t_max": 4.0,
    "t_unit": None,  # "tB" or "omega0"; None picks tB when F != 0
    "stride": 10,
    "eta": 1e-4,
    "eps": 1e-10,
    "seed": 0,
    "M_list": None,
    "L": 4,
    "heom_dt": 0.1,
    "beta": None,  # None: zero temperature
    "n_max": 6,
    "out": "out",
}


class ConfigError(ValueError):
    """Raised with every problem found in a config file."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n" + "\n".join(f"  {e}" for e in self.errors))


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    N: int
    J: float
    g: float
    phi: float
    F: float
    M: int
    omega0: float = 1.0
    branch: str = "optical"
    sigma0: float | None = None
    dt: float | None = None
    t_max: float = 4.0
    t_unit: str | None = None
    stride: int = 10
    eta: float = 1e-4
    eps: float = 1e-10
    seed: int = 0
    M_list: tuple | None = None
    L: int = 4
    heom_dt: float = 0.1
    beta: float | None = None
    n_max: int = 6
    out: str = "out"

    @property
    def params(self) -> ModelParams:
        return ModelParams(N=self.N, J=self.J, g=self.g, phi=self.phi, F=self.F,
                           omega0=self.omega0, branch=self.branch)

    @property
    def unit(self) -> str:
        if self.t_unit is not None:
            return self.t_unit
        return "tB" if self.F else "omega0"

    @property
    def time_scale(self) -> float:
        """Length of one output time unit in 1/omega0."""
        return self.params.bloch_period if self.unit == "tB" else 1.0 / self.omega0

    @property
    def t_final(self) -> float:
        return self.t_max * self.time_scale

    @property
    def step(self) -> float:
        from .propagator import default_dt

        return self.dt if self.dt is not None else default_dt(self.params)

    @property
    def ms(self) -> tuple:
        return tuple(self.M_list) if self.M_list else (self.M,)

    def with_(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


_INT = {"N", "M", "stride", "seed", "L", "n_max"}
_FLOAT = {"J", "g", "phi", "F", "omega0", "t_max", "eta", "eps", "heom_dt"}
_OPT_FLOAT = {"sigma0", "dt", "beta"}
_NONE = ("none", "auto", "")


def _convert(key: str, raw: str):
    if key in _INT:
        v = float(raw)
        if not v.is_integer():
            raise ValueError(f"expected an integer, got {raw!r}")
        return int(v)
    if key in _FLOAT:
        return float(raw)
    if key in _OPT_FLOAT:
        if raw.lower() in _NONE or (key == "beta" and raw.lower() in ("inf", "zero")):
            return None
        return float(raw)
    if key == "M_list":
        if raw.lower() in _NONE:
            return None
        return tuple(int(x) for x in raw.replace(",", " ").split())
    if key == "t_unit":
        return None if raw.lower() in _NONE else raw
    return raw


def _range_errors(cfg: dict) -> list[tuple[str, str]]:
    out = []

    def bad(key, msg):
        out.append((key, msg))

    if cfg["experiment"] not in EXPERIMENTS:
        bad("experiment", f"unknown experiment {cfg['experiment']!r}, expected one of {', '.join(EXPERIMENTS)}")
    N = cfg["N"]
    if N < 2 or N % 2:
        bad("N", f"N must be even and >= 2, got {N}")
    for key in ("J", "g", "phi", "F", "t_max", "eta", "eps", "heom_dt", "omega0"):
        if not math.isfinite(cfg[key]):
            bad(key, f"{key} must be finite")
    if not cfg["omega0"] > 0:
        bad("omega0", "omega0 must be positive")
    if cfg["branch"] not in BRANCHES:
        bad("branch", f"branch must be one of {BRANCHES}")
    if cfg["M"] < 1:
        bad("M", "M must be >= 1")
    if cfg["sigma0"] is not None and not cfg["sigma0"] > 0:
        bad("sigma0", "sigma0 must be positive")
    if cfg["dt"] is not None and not cfg["dt"] > 0:
        bad("dt", "dt must be positive")
    if not cfg["t_max"] > 0:
        bad("t_max", "t_max must be positive")
    if cfg["t_unit"] not in (None, "tB", "omega0"):
        bad("t_unit", "t_unit must be tB or omega0")
    if cfg["t_unit"] == "tB" and cfg["F"] == 0:
        bad("t_unit", "t_unit = tB needs F != 0")
    if cfg["stride"] < 1:
        bad("stride", "stride must be >= 1")
    if cfg["eta"] < 0:
        bad("eta", "eta must be non-negative")
    if cfg["eps"] < 0:
        bad("eps", "eps must be non-negative")
    if cfg["seed"] < 0:
        bad("seed", "seed must be non-negative")
    if cfg["L"] < 0:
        bad("L", "L must be non-negative")
    if not cfg["heom_dt"] > 0:
        bad("heom_dt", "heom_dt must be positive")
    if cfg["beta"] is not None and not cfg["beta"] > 0:
        bad("beta", "beta must be positive")
    if cfg["n_max"] < 1:
        bad("n_max", "n_max must be >= 1")
    ml = cfg["M_list"]
    if ml is not None and any(m < 1 for m in ml):
        bad("M_list", "all multiplicities must be >= 1")
    exp = cfg["experiment"]
    if exp == "sigma-scan" and (ml is None or len(ml) < 3):
        bad("M_list", "sigma-scan needs at least 3 multiplicities")
    if exp in ("broad-packet", "narrow-packet", "energy-balance") and cfg["sigma0"] is None:
        bad("sigma0", f"{exp} needs a Gaussian width sigma0")
    if exp == "heom-compare" and N > 8:
        bad("N", "heom-compare is limited to N <= 8")
    return out


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a configuration; raises :class:`ConfigError`."""
    errors = []
    values: dict = {}
    where: dict = {}
    known = set(REQUIRED) | set(DEFAULTS)
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            errors.append(f"line {lineno}: expected key = value, got {body!r}")
            continue
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in known:
            errors.append(f"line {lineno}: unknown key {key!r}")
            continue
        if key in values:
            errors.append(f"line {lineno}: duplicate key {key!r} (first on line {where[key]})")
            continue
        try:
            values[key] = _convert(key, raw)
        except ValueError as exc:
            errors.append(f"line {lineno}: bad value for {key!r}: {exc}")
            continue
        where[key] = lineno
    for key in REQUIRED:
        if key not in values and not any(f"{key!r}" in e for e in errors):
            errors.append(f"missing key {key!r}")
    if errors:
        raise ConfigError(errors)
    cfg = dict(DEFAULTS)
    cfg.update(values)
    for key, msg in _range_errors(cfg):
        errors.append(f"line {where[key]}: {msg}" if key in where else f"{key}: {msg}")
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(**cfg)


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(cfg: ExperimentConfig) -> str:
    """Canonical text form; parse_config(format_config(c)) == c."""
    return "".join(f"{f.name} = {_fmt(getattr(cfg, f.name))}\n" for f in fields(cfg))


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
