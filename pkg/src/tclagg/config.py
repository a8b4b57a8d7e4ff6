"""Experiment configuration (JSON) and the bundled presets."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

from .grid import CvGrid, build_grid, grid_for_deadband
from .physics import TclParams

PRESETS = ("fig1", "fig4", "fig5", "fig6")


class ConfigError(ValueError):
    pass


@dataclass
class GridSpec:
    """CV layout.  Precedence: explicit ``lambda_low``/``lambda_high``, then
    ``n_deadband`` (symmetric margins), then ``margin_c`` degrees beyond the
    deadband on each side."""

    N: int = 51
    n_deadband: int | None = None
    margin_c: float = 2.0
    lambda_low: float | None = None
    lambda_high: float | None = None

    def build(self, p: TclParams) -> CvGrid:
        if self.lambda_low is not None or self.lambda_high is not None:
            if self.lambda_low is None or self.lambda_high is None:
                raise ValueError("give both lambda_low and lambda_high")
            return build_grid(self.N, p.lambda_min, p.lambda_max, self.lambda_low, self.lambda_high)
        if self.n_deadband is not None:
            return grid_for_deadband(self.N, p.lambda_min, p.lambda_max, self.n_deadband)
        return build_grid(self.N, p.lambda_min, p.lambda_max,
                          p.lambda_min - self.margin_c, p.lambda_max + self.margin_c)


_POLICY_KINDS = ("nominal", "randomized", "file", "designed")
_WEATHER_KINDS = ("constant", "csv")
_INIT_KINDS = ("deadband", "interval", "stationary")


@dataclass
class ExperimentConfig:
    name: str = "default"
    grid: GridSpec = field(default_factory=GridSpec)
    params: TclParams = field(default_factory=TclParams)
    dt: float | None = None  # hours; derived from the CFL bound when None
    dt_cfl_fraction: float = 1.0
    horizon_hours: float = 24.0
    steps: int | None = None  # if set (and dt unset), dt = horizon_hours / steps
    n_tcl: int = 50_000
    seed: int = 1
    weather: dict = field(default_factory=lambda: {"kind": "constant", "theta_a": 32.0})
    policy: dict = field(default_factory=lambda: {"kind": "nominal"})
    reference: dict = field(default_factory=lambda: {"amplitudes_kw": [], "periods_h": []})
    init: dict = field(default_factory=lambda: {"kind": "deadband", "mode": "off"})
    jitter: float = 0.0
    monotone: bool = True
    receding_horizon: dict | None = None  # {"window": steps | null, "resolve_every": steps}
    base_dir: Path = field(default=Path("."), repr=False, compare=False)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(ok, key, msg):
            if not ok:
                raise ConfigError(f"{key}: {msg}")

        need(self.dt is None or self.dt > 0, "dt", "must be positive")
        need(0 < self.dt_cfl_fraction <= 1, "dt_cfl_fraction", "must lie in (0, 1]")
        need(self.horizon_hours > 0, "horizon_hours", "must be positive")
        need(self.steps is None or self.steps >= 1, "steps", "must be at least 1")
        need(self.n_tcl >= 1, "n_tcl", "must be at least 1")
        need(self.seed >= 0, "seed", "must be non-negative")
        need(0 <= self.jitter < 1, "jitter", "must lie in [0, 1)")
        need(self.weather.get("kind") in _WEATHER_KINDS, "weather", f"kind must be one of {_WEATHER_KINDS}")
        if self.weather["kind"] == "constant":
            need("theta_a" in self.weather, "weather", "constant weather needs theta_a")
        else:
            need("path" in self.weather, "weather", "csv weather needs path")
        need(self.policy.get("kind") in _POLICY_KINDS, "policy", f"kind must be one of {_POLICY_KINDS}")
        if self.policy["kind"] == "file":
            need("path" in self.policy, "policy", "file policy needs path")
        need(self.init.get("kind") in _INIT_KINDS, "init", f"kind must be one of {_INIT_KINDS}")
        need(self.init.get("mode", "off") in ("off", "on"), "init", "mode must be 'off' or 'on'")
        if self.init["kind"] == "interval":
            iv = self.init.get("interval")
            need(iv is not None and len(iv) == 2 and iv[0] < iv[1], "init", "interval needs [lo, hi] with lo < hi")
        ref = self.reference
        need(len(ref.get("amplitudes_kw", [])) == len(ref.get("periods_h", [])), "reference",
             "amplitudes_kw and periods_h must have equal length")
        need(all(T > 0 for T in ref.get("periods_h", [])), "reference", "periods must be positive")
        if self.receding_horizon is not None:
            need(self.receding_horizon.get("resolve_every", 1) >= 1, "receding_horizon",
                 "resolve_every must be at least 1")

    def resolve_path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "base_dir"}
        d["grid"] = asdict(self.grid)
        d["params"] = asdict(self.params)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _line_of(text: str, key: str) -> int | None:
    needle = f'"{key}"'
    for n, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return n
    return None


def config_from_json(text: str, base_dir=".", source: str = "<config>") -> ExperimentConfig:
    """Parse a config document; errors carry ``source:line`` locations."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}:1: top level must be an object")

    def where(key):
        n = _line_of(text, key)
        return f"{source}:{n}" if n else source

    known = {f.name for f in fields(ExperimentConfig)} - {"base_dir"}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{where(key)}: unknown field {key!r}")
    kw = dict(raw)
    try:
        kw["grid"] = GridSpec(**raw.get("grid", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where('grid')}: grid: {exc}") from None
    try:
        kw["params"] = TclParams(**raw.get("params", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where('params')}: params: {exc}") from None
    try:
        return ExperimentConfig(base_dir=Path(base_dir), **kw)
    except ConfigError as exc:
        key = str(exc).split(":", 1)[0]
        raise ConfigError(f"{where(key)}: {exc}") from None
    except TypeError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return config_from_json(path.read_text(), base_dir=path.parent, source=str(path))


def preset_dir() -> Path:
    return Path(str(resources.files("tclagg") / "presets"))


def load_preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return load_config(preset_dir() / f"{name}.json")
