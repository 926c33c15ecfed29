"""Experiment configuration: flat key=value files with dotted sections.

Unknown keys are rejected by name (silent typos are worse than strictness),
values are validated field by field, and the fully resolved configuration
serializes canonically so its SHA-256 identifies the experiment.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from ..dynamics import (
    ConvDiffDynamics,
    ConvDiffParams,
    PoissonAR1Params,
    PoissonDynamics,
)
from ..errors import ConfigError
from ..estimators import KINDS, EstimatorSpec
from ..grids import GridShape

SCENARIOS = ("poisson_ar1", "convdiff")

# scenario.* keys accepted per scenario
_SCENARIO_KEYS = {
    "poisson_ar1": ("a", "sigma_z", "sigma_w"),
    "convdiff": ("theta", "epsilon", "h", "dt", "sigma_w", "u0_sigma"),
}
_SCENARIO_DEFAULTS = {
    "poisson_ar1": {"a": 0.0, "sigma_z": 1.0, "sigma_w": 1.0},
    "convdiff": {"theta": 0.25, "epsilon": 0.2, "h": 1.0, "dt": 1.0,
                 "sigma_w": 0.01, "u0_sigma": 1.0},
}
_ESTIMATOR_KEYS = ("lambda1", "lambda2", "rank", "svt", "max_iter", "tol",
                   "strict", "engine")
_TOP_KEYS = ("scenario", "T", "N", "seeds", "output_dir", "observed_fraction",
             "mask_seed", "estimators", "structure_dump_max")
_FILTER_KEYS = ("sigma_v", "inflation", "sigma_w")

# iterative estimators run warm-started and budgeted inside the filter loop
# unless the config says otherwise; see the estimator module docs
_FILTER_MODE_DEFAULTS = {
    "glasso": {"strict": False, "max_iter": 30, "tol": 0.05, "engine": "admm"},
    "sgpalm": {"strict": False, "max_iter": 1500, "tol": 1e-5},
    "teralasso": {"strict": False, "max_iter": 500, "tol": 1e-5},
    "kglasso": {"strict": False, "max_iter": 8, "tol": 1e-5},
}


@dataclass
class ExperimentConfig:
    scenario: str
    shape: GridShape
    T: int = 20
    N: int = 25
    seeds: tuple = (0,)
    output_dir: str = "results"
    observed_fraction: float = 0.5
    mask_seed: int = 1234
    estimators: tuple = tuple(KINDS)
    estimator_specs: dict = field(default_factory=dict)
    sigma_v: float = 0.1
    inflation: float = 1.0
    scenario_params: dict = field(default_factory=dict)
    structure_dump_max: int = 1024

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        if self.N < 2:
            raise ConfigError(f"N must be >= 2, got {self.N}")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if not 0.0 < self.observed_fraction <= 1.0:
            raise ConfigError(
                f"observed_fraction must lie in (0, 1], got {self.observed_fraction}")
        if self.sigma_v <= 0:
            raise ConfigError(f"filter.sigma_v must be positive, got {self.sigma_v}")
        if self.inflation < 1.0:
            raise ConfigError(f"filter.inflation must be >= 1, got {self.inflation}")
        for kind in self.estimators:
            if kind not in KINDS:
                raise ConfigError(f"unknown estimator {kind!r}; choose from {KINDS}")
        defaults = dict(_SCENARIO_DEFAULTS[self.scenario])
        defaults.update(self.scenario_params)
        self.scenario_params = defaults
        for kind in self.estimators:
            if kind not in self.estimator_specs:
                self.estimator_specs[kind] = _build_spec(kind, {})

    # -- factories -----------------------------------------------------

    def make_dynamics(self):
        p = self.scenario_params
        if self.scenario == "poisson_ar1":
            params = PoissonAR1Params(self.shape, a=p["a"], sigma_z=p["sigma_z"],
                                      sigma_w=p["sigma_w"], T=self.T)
            return PoissonDynamics(params)
        params = ConvDiffParams(self.shape, theta=p["theta"], epsilon=p["epsilon"],
                                h=p["h"], dt=p["dt"], sigma_w=p["sigma_w"], T=self.T)
        return ConvDiffDynamics(params, u0_sigma=p["u0_sigma"])

    # -- canonical serialization ----------------------------------------

    def to_text(self) -> str:
        lines = {
            "scenario": self.scenario,
            "shape.d1": self.shape.d1,
            "shape.d2": self.shape.d2,
            "T": self.T,
            "N": self.N,
            "seeds": ",".join(str(s) for s in self.seeds),
            "output_dir": self.output_dir,
            "observed_fraction": repr(float(self.observed_fraction)),
            "mask_seed": self.mask_seed,
            "estimators": ",".join(self.estimators),
            "structure_dump_max": self.structure_dump_max,
            "filter.sigma_v": repr(float(self.sigma_v)),
            "filter.inflation": repr(float(self.inflation)),
        }
        for key, value in sorted(self.scenario_params.items()):
            lines[f"scenario.{key}"] = repr(float(value))
        for kind in sorted(self.estimator_specs):
            spec = self.estimator_specs[kind]
            for name in _ESTIMATOR_KEYS:
                value = getattr(spec, name)
                if value is None:
                    continue
                if isinstance(value, bool):
                    value = "true" if value else "false"
                elif isinstance(value, float):
                    value = repr(value)
                lines[f"estimator.{kind}.{name}"] = value
        return "".join(f"{k} = {lines[k]}\n" for k in sorted(lines))

    def sha256(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


def _build_spec(kind: str, raw: dict) -> EstimatorSpec:
    values = dict(raw)
    for key, default in _FILTER_MODE_DEFAULTS.get(kind, {}).items():
        values.setdefault(key, default)
    try:
        return EstimatorSpec(kind, **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"estimator.{kind}: {exc}") from exc


def _parse_scalar(field_name: str, raw: str, kind: type, line_no: int):
    try:
        if kind is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"line {line_no}: field {field_name}: {exc}") from exc


def parse_config_text(text: str, source: str = "<string>") -> ExperimentConfig:
    raw: dict[str, tuple[str, int]] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{line_no}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if not key or not value:
            raise ConfigError(f"{source}:{line_no}: empty key or value in {line!r}")
        if key in raw:
            raise ConfigError(f"{source}:{line_no}: duplicate key {key!r}")
        raw[key] = (value, line_no)

    def take(key, kind, default=None):
        if key not in raw:
            return default
        value, line_no = raw.pop(key)
        return _parse_scalar(key, value, kind, line_no)

    scenario = take("scenario", str)
    if scenario is None:
        raise ConfigError(f"{source}: missing required key 'scenario'")
    if scenario not in SCENARIOS:
        raise ConfigError(f"{source}: scenario must be one of {SCENARIOS}, got {scenario!r}")
    d1 = take("shape.d1", int)
    d2 = take("shape.d2", int)
    if d1 is None or d2 is None:
        raise ConfigError(f"{source}: missing required keys 'shape.d1' and 'shape.d2'")

    kwargs = {
        "scenario": scenario,
        "shape": GridShape(d1, d2),
        "T": take("T", int, 20),
        "N": take("N", int, 25),
        "output_dir": take("output_dir", str, "results"),
        "observed_fraction": take("observed_fraction", float, 0.5),
        "mask_seed": take("mask_seed", int, 1234),
        "structure_dump_max": take("structure_dump_max", int, 1024),
        "sigma_v": take("filter.sigma_v", float, 0.1),
        "inflation": take("filter.inflation", float, 1.0),
    }
    if "seeds" in raw:
        value, line_no = raw.pop("seeds")
        try:
            kwargs["seeds"] = tuple(int(s.strip()) for s in value.split(","))
        except ValueError as exc:
            raise ConfigError(f"{source}:{line_no}: field seeds: {exc}") from exc
    if "estimators" in raw:
        value, _ = raw.pop("estimators")
        kwargs["estimators"] = tuple(s.strip() for s in value.split(","))

    scenario_params = {}
    for name in _SCENARIO_KEYS[scenario]:
        got = take(f"scenario.{name}", float)
        if got is not None:
            scenario_params[name] = got
    # filter.sigma_w is an override of the scenario's state-noise level
    sigma_w_override = take("filter.sigma_w", float)
    if sigma_w_override is not None:
        scenario_params["sigma_w"] = sigma_w_override
    kwargs["scenario_params"] = scenario_params

    estimator_specs = {}
    spec_raw: dict[str, dict] = {}
    for key in list(raw):
        if not key.startswith("estimator."):
            continue
        value, line_no = raw.pop(key)
        parts = key.split(".")
        if len(parts) != 3 or parts[1] not in KINDS or parts[2] not in _ESTIMATOR_KEYS:
            raise ConfigError(f"{source}:{line_no}: unknown key {key!r}")
        kind, name = parts[1], parts[2]
        caster = {"lambda1": float, "lambda2": float, "rank": int, "svt": float,
                  "max_iter": int, "tol": float, "strict": bool, "engine": str}[name]
        spec_raw.setdefault(kind, {})[name] = _parse_scalar(key, value, caster, line_no)
    for kind, values in spec_raw.items():
        estimator_specs[kind] = _build_spec(kind, values)
    kwargs["estimator_specs"] = estimator_specs

    if raw:
        key, (_, line_no) = next(iter(raw.items()))
        raise ConfigError(f"{source}:{line_no}: unknown key {key!r}")
    return ExperimentConfig(**kwargs)


def parse_config(path) -> ExperimentConfig:
    """Load and validate an experiment configuration file."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, source=str(path))
