"""Experiment configuration: loading, defaults and validation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .difficulty import TimingParams
from .game import SystemParams

__all__ = ["ConfigError", "SweepSpec", "ExperimentConfig", "validate_config", "load_config"]

SYSTEM_KEYS = ("B", "r", "c", "h", "L", "N")
TIMING_KEYS = ("t0", "beta", "R_th", "G")
OTHER_KEYS = (
    "experiment", "s", "s_dist", "delta", "horizon", "seed", "replications", "sweep",
    "initial_h", "num_windows", "num_blocks", "mode", "out_dir",
)
DEFAULT_SIZES = (100.0, 200.0, 300.0)


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


@dataclass(frozen=True)
class SweepSpec:
    param: str
    start: float
    stop: float
    steps: int

    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.steps)


@dataclass
class ExperimentConfig:
    experiment: str | None = None
    system: SystemParams = field(default_factory=SystemParams)
    timing: TimingParams = field(default_factory=TimingParams)
    sizes: tuple[float, ...] = DEFAULT_SIZES
    s_low: float = 0.0
    s_high: float = 1024.0
    delta: float = 0.9
    horizon: int = 10
    seed: int = 0
    replications: int | None = None
    sweep: SweepSpec | None = None
    initial_h: float | None = None
    num_windows: int = 20
    num_blocks: int | None = None
    mode: str = "analytic"
    out_dir: str | None = None

    def to_dict(self) -> dict[str, Any]:
        """Flat mapping in the config-file key layout."""
        d: dict[str, Any] = {"experiment": self.experiment}
        d.update({k: getattr(self.system, k) for k in SYSTEM_KEYS})
        d.update({k: getattr(self.timing, k) for k in TIMING_KEYS})
        d["s"] = [float(x) for x in self.sizes]
        d["s_dist"] = {"low": self.s_low, "high": self.s_high}
        for k in ("delta", "horizon", "seed", "replications", "initial_h", "num_windows",
                  "num_blocks", "mode", "out_dir"):
            d[k] = getattr(self, k)
        d["sweep"] = asdict(self.sweep) if self.sweep else None
        return d

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))


def _num(raw: dict, key: str, default, kind=float):
    val = raw.get(key, default)
    if val is None:
        return None
    if isinstance(val, bool):
        raise ConfigError(f"{key}: expected a number, got {val!r}")
    try:
        out = kind(val)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected a number, got {val!r}") from None
    if kind is float and not math.isfinite(out):
        raise ConfigError(f"{key}: must be finite, got {val!r}")
    if kind is int and out != float(val):
        raise ConfigError(f"{key}: expected an integer, got {val!r}")
    return out


def load_config(raw: dict | None) -> ExperimentConfig:
    """Build a validated config from a flat mapping; missing keys take defaults."""
    raw = dict(raw or {})
    unknown = set(raw) - set(SYSTEM_KEYS) - set(TIMING_KEYS) - set(OTHER_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")

    base = SystemParams()
    sizes = raw.get("s")
    N = _num(raw, "N", len(sizes) if isinstance(sizes, list) else base.N, int)
    if sizes is None:
        sizes = DEFAULT_SIZES if N == 3 else tuple(100.0 * (i + 1) for i in range(N))
    if not isinstance(sizes, (list, tuple)) or not sizes:
        raise ConfigError("s: expected a non-empty list of block sizes")
    try:
        sizes = tuple(float(x) for x in sizes)
    except (TypeError, ValueError):
        raise ConfigError(f"s: expected numbers, got {sizes!r}") from None
    if len(sizes) != N:
        raise ConfigError(f"s: has {len(sizes)} entries but N={N}")
    if any(not x > 0 for x in sizes):
        raise ConfigError("s: block sizes must be > 0")

    values = {
        "B": _num(raw, "B", base.B),
        "r": _num(raw, "r", base.r),
        "c": _num(raw, "c", base.c),
        "h": _num(raw, "h", base.h),
        "L": _num(raw, "L", base.L, int),
    }
    for key, cond, msg in (
        ("B", values["B"] >= 0, "must be >= 0"),
        ("r", values["r"] >= 0, "must be >= 0"),
        ("c", values["c"] > 0, "must be > 0"),
        ("L", values["L"] >= 1, "must be >= 1"),
        ("N", N >= 1, "must be >= 1"),
    ):
        if not cond:
            raise ConfigError(f"{key}: {msg}, got {values.get(key, N)}")
    if not 0 <= values["h"] <= values["L"]:
        raise ConfigError(f"h: must lie in [0, L={values['L']}], got {values['h']}")
    system = SystemParams(N=N, **values)

    tbase = TimingParams()
    tvals = {
        "t0": _num(raw, "t0", tbase.t0),
        "beta": _num(raw, "beta", tbase.beta),
        "R_th": _num(raw, "R_th", tbase.R_th),
        "G": _num(raw, "G", tbase.G, int),
    }
    for key in ("t0", "beta", "R_th"):
        if not tvals[key] > 0:
            raise ConfigError(f"{key}: must be > 0, got {tvals[key]}")
    if tvals["G"] < 1:
        raise ConfigError(f"G: must be >= 1, got {tvals['G']}")
    timing = TimingParams(**tvals)

    dist = raw.get("s_dist") or {}
    if not isinstance(dist, dict):
        raise ConfigError("s_dist: expected a mapping with keys low/high")
    s_low = _num(dist, "low", 0.0)
    s_high = _num(dist, "high", 1024.0)
    if not 0 <= s_low < s_high:
        raise ConfigError(f"s_dist: need 0 <= low < high, got ({s_low}, {s_high})")

    delta = _num(raw, "delta", 0.9)
    if not 0 <= delta < 1:
        raise ConfigError(f"delta: must lie in [0, 1), got {delta}")
    horizon = _num(raw, "horizon", 10, int)
    if horizon < 0:
        raise ConfigError(f"horizon: must be >= 0, got {horizon}")
    seed = _num(raw, "seed", 0, int)
    if not 0 <= seed < 2**64:
        raise ConfigError(f"seed: must be an unsigned 64-bit integer, got {seed}")
    reps = _num(raw, "replications", None, int)
    if reps is not None and reps < 1:
        raise ConfigError(f"replications: must be >= 1, got {reps}")
    num_windows = _num(raw, "num_windows", 20, int)
    if num_windows < 1:
        raise ConfigError(f"num_windows: must be >= 1, got {num_windows}")
    num_blocks = _num(raw, "num_blocks", None, int)
    if num_blocks is not None and num_blocks < 1:
        raise ConfigError(f"num_blocks: must be >= 1, got {num_blocks}")
    initial_h = _num(raw, "initial_h", None)
    if initial_h is not None and not 0 <= initial_h <= system.L:
        raise ConfigError(f"initial_h: must lie in [0, L={system.L}], got {initial_h}")
    mode = raw.get("mode", "analytic")
    if mode not in ("analytic", "real-hash"):
        raise ConfigError(f"mode: must be 'analytic' or 'real-hash', got {mode!r}")

    sweep = None
    if raw.get("sweep") is not None:
        sw = raw["sweep"]
        if not isinstance(sw, dict):
            raise ConfigError("sweep: expected a mapping with param/start/stop/steps")
        missing = [k for k in ("param", "start", "stop") if k not in sw]
        if missing:
            raise ConfigError(f"sweep: missing required keys {', '.join(missing)}")
        steps = _num(sw, "steps", 11, int)
        if steps < 1:
            raise ConfigError(f"sweep.steps: must be >= 1, got {steps}")
        sweep = SweepSpec(str(sw["param"]), _num(sw, "start", None), _num(sw, "stop", None), steps)

    exp = raw.get("experiment")
    return ExperimentConfig(
        experiment=None if exp is None else str(exp),
        system=system, timing=timing, sizes=sizes, s_low=s_low, s_high=s_high,
        delta=delta, horizon=horizon, seed=seed, replications=reps, sweep=sweep,
        initial_h=initial_h, num_windows=num_windows, num_blocks=num_blocks, mode=mode,
        out_dir=raw.get("out_dir"),
    )


def validate_config(path: str | Path | None) -> ExperimentConfig:
    """Read a YAML (or JSON) config file; ``None`` or an empty file gives all defaults."""
    if path is None:
        return load_config({})
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"malformed config {path}: top level must be a mapping")
    return load_config(raw)
