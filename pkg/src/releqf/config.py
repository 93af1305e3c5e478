"""Flat ``section.key = value`` configuration files.

Blank lines and ``#`` comments are ignored. Every key is optional; unknown
keys, duplicates and bad values raise :class:`ConfigError` naming the key.
Vectors are written as comma-separated numbers, e.g.
``scenario.d1_ring = 1, 0, 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .eqf import GainConfig
from .errors import ConfigError, DegenerateDirections
from .model import ReferenceDirections
from .sim import DEFAULT_CONVERGENCE_TIME, SUCCESS_TIME_LIMIT, ScenarioConfig


def _float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("not finite")
    return v


def _int(s: str) -> int:
    return int(s, 10)


def _vec3(s: str) -> np.ndarray:
    parts = [p for p in s.replace(",", " ").split()]
    if len(parts) != 3:
        raise ValueError("expected three numbers")
    return np.array([_float(p) for p in parts])


def _choice(*options):
    def conv(s: str) -> str:
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return s

    return conv


def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _positive(v):
    return v > 0


def _non_negative(v):
    return v >= 0


# key -> (converter, check or None, what the check means)
_KEYS = {
    "scenario.seed": (_int, _non_negative, "non-negative"),
    "scenario.duration": (_float, _positive, "positive"),
    "scenario.predict_rate": (_float, _positive, "positive"),
    "scenario.measure_rate": (_float, _positive, "positive"),
    "scenario.update_iterations": (_int, lambda v: v >= 1, ">= 1"),
    "scenario.sigma_theta": (_float, _non_negative, "non-negative"),
    "scenario.omega_T_range": (_float, _non_negative, "non-negative"),
    "scenario.u_range": (_float, _non_negative, "non-negative"),
    "scenario.d1_ring": (_vec3, None, ""),
    "scenario.d2_ring": (_vec3, None, ""),
    "filter.k_n": (_float, _positive, "positive"),
    "filter.m": (_float, _positive, "positive"),
    "filter.sigma0": (_float, _positive, "positive"),
    "filter.damping": (_choice("auto", "exact", "euler"), None, ""),
    "filter.riccati_output": (_choice("C", "C_star"), None, ""),
    "filter.propagation": (_choice("transition", "euler"), None, ""),
    "filter.scale_damping": (_bool, None, ""),
    "ekf.k_n": (_float, _positive, "positive"),
    "ekf.m": (_float, _positive, "positive"),
    "ekf.p0": (_float, _positive, "positive"),
    "metrics.convergence_time": (_float, _non_negative, "non-negative"),
    "montecarlo.time_limit": (_float, _positive, "positive"),
    "montecarlo.workers": (_int, lambda v: v >= 1, ">= 1"),
    "bench.steps": (_int, lambda v: v >= 1, ">= 1"),
    "bench.warmup": (_int, _non_negative, "non-negative"),
}

KNOWN_KEYS = tuple(_KEYS)


@dataclass(frozen=True)
class FilterSettings:
    k_n: float = 10.0
    m: float = 1.0
    sigma0: float = 1.0
    damping: str = "auto"
    riccati_output: str = "C"
    propagation: str = "transition"
    scale_damping: bool = True

    def gains(self) -> GainConfig:
        return GainConfig.scalar(self.k_n, self.m, self.sigma0)

    def options(self) -> dict:
        return {
            "damping": self.damping,
            "riccati_output": self.riccati_output,
            "propagation": self.propagation,
            "scale_damping": self.scale_damping,
        }


@dataclass(frozen=True)
class EkfSettings:
    k_n: float = 10.0
    m: float = 1.0
    p0: float = 1.0


@dataclass(frozen=True)
class AppConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    filter: FilterSettings = field(default_factory=FilterSettings)
    ekf: EkfSettings = field(default_factory=EkfSettings)
    convergence_time: float = DEFAULT_CONVERGENCE_TIME
    mc_time_limit: float = SUCCESS_TIME_LIMIT
    mc_workers: int = 1
    bench_steps: int = 100_000
    bench_warmup: int = 1000


def parse_config(text: str) -> AppConfig:
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'", key=line)
        key, _, val = (p.strip() for p in line.partition("="))
        if key not in _KEYS:
            raise ConfigError(f"unknown key {key!r}", key=key)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", key=key)
        conv, check, what = _KEYS[key]
        try:
            v = conv(val)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {val!r} ({exc})", key=key) from None
        if check is not None and not check(v):
            raise ConfigError(f"{key!r} must be {what}, got {val!r}", key=key)
        values[key] = v
    return build_config(values)


def build_config(values: dict) -> AppConfig:
    def section(prefix):
        n = len(prefix) + 1
        return {k[n:]: v for k, v in values.items() if k.startswith(prefix + ".")}

    sc = section("scenario")
    d1 = sc.pop("d1_ring", None)
    d2 = sc.pop("d2_ring", None)
    scenario = ScenarioConfig(**sc)
    if d1 is not None or d2 is not None:
        base = scenario.refs
        d1 = base.d1_ring if d1 is None else d1
        d2 = base.d2_ring if d2 is None else d2
        key = "scenario.d1_ring" if "scenario.d1_ring" in values else "scenario.d2_ring"
        try:
            refs = ReferenceDirections.normalized(d1, d2)
        except (DegenerateDirections, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", key=key) from None
        scenario = replace(scenario, refs=refs)

    mc = section("montecarlo")
    bench = section("bench")
    return AppConfig(
        scenario=scenario,
        filter=FilterSettings(**section("filter")),
        ekf=EkfSettings(**section("ekf")),
        convergence_time=values.get("metrics.convergence_time", DEFAULT_CONVERGENCE_TIME),
        mc_time_limit=mc.get("time_limit", SUCCESS_TIME_LIMIT),
        mc_workers=mc.get("workers", 1),
        bench_steps=bench.get("steps", 100_000),
        bench_warmup=bench.get("warmup", 1000),
    )


def load_config(path: str | Path | None) -> AppConfig:
    if path is None:
        return AppConfig()
    return parse_config(Path(path).read_text())
