"""Run configuration: a flat ``key = value`` text format.

Blank lines and lines starting with ``#`` are ignored. Unknown keys and
invalid values raise :class:`ConfigError`.
"""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields, replace
from fractions import Fraction
from pathlib import Path

from .sphere import format_rational, parse_rational

__all__ = ["RunConfig", "ConfigError", "load_config", "parse_config", "SCHEMA_VERSION"]

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid or unreadable configuration."""


@dataclass(frozen=True)
class RunConfig:
    """All knobs of a construction run.

    The first block holds the construction's inputs (dimension, starting time,
    target closeness, complex radius, number of outer stages). The remaining
    keys bound the searches and size the statistical batteries.
    """

    d: int = 2
    t0: Fraction = Fraction(1, 2)
    eps: float = 0.5
    delta: float = 1.05
    N: int = 1
    power_cap: int = 10_000
    denom_cap: int = 10_000_000
    amp_cap: float = 1e6
    degree_cap: int = 10_000
    denominator_policy: str = "multiple"
    seed: int = 0
    eps0_policy: str = "desk"
    ball_norm: str = "euclidean"
    on_failure: str = "record"
    precision_bits: int = 256
    orbit_min: int = 4096
    orbit_max: int = 65536
    search_samples: int = 4096
    search_chunk: int = 8
    n_lebesgue: int = 64
    nballs: int = 200
    ref_size: int = 100_000
    alpha_test: float = 1e-3
    closeness_samples: int = 64
    closeness_random_powers: int = 100
    transversal_C: float = 10.0
    eps_report: float = 0.1
    cud_eps: float = 0.3
    cud_min_length: int = 256
    cud_max_length: int = 16_384
    fidelity_points: int = 8

    def __post_init__(self):
        if self.d < 2:
            raise ConfigError("d must be >= 2")
        if not (0 <= self.t0 < 1):
            raise ConfigError("t0 must lie in [0, 1)")
        if self.eps <= 0 or self.delta <= 0:
            raise ConfigError("eps and delta must be positive")
        if self.N < 1:
            raise ConfigError("N must be >= 1")
        for name in ("power_cap", "denom_cap", "amp_cap", "degree_cap", "precision_bits",
                     "orbit_min", "orbit_max", "search_samples", "search_chunk",
                     "n_lebesgue", "nballs", "ref_size", "closeness_samples",
                     "cud_min_length", "cud_max_length", "fidelity_points"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.eps0_policy not in ("desk", "paper"):
            raise ConfigError("eps0_policy must be 'desk' or 'paper'")
        if self.ball_norm not in ("euclidean", "max"):
            raise ConfigError("ball_norm must be 'euclidean' or 'max'")
        if self.denominator_policy not in ("multiple", "increment"):
            raise ConfigError("denominator_policy must be 'multiple' or 'increment'")
        if self.on_failure not in ("record", "abort"):
            raise ConfigError("on_failure must be 'record' or 'abort'")
        if self.precision_bits < 64:
            raise ConfigError("precision_bits must be at least 64")

    @property
    def eps0(self) -> float:
        """Inner-induction tolerance: eps/10 (desk) or eps^100 (paper)."""
        return self.eps / 10 if self.eps0_policy == "desk" else self.eps ** 100

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, Fraction):
                value = format_rational(value)
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        out = asdict(self)
        out["t0"] = format_rational(self.t0)
        return out

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def with_updates(self, **kw) -> "RunConfig":
        return replace(self, **kw)


def _coerce(name: str, kind, text: str):
    text = text.strip()
    try:
        if name == "t0":
            return parse_rational(text)
        if kind is int or kind == "int":
            return int(float(text)) if "e" in text.lower() else int(text)
        if kind is float or kind == "float":
            return float(text)
        return text
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"bad value for {name}: {text!r}") from exc


def parse_config(text: str, **overrides) -> RunConfig:
    types = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, types[key], value)
    for key, value in overrides.items():
        if value is not None:
            values[key] = value
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, **overrides) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, **overrides)
