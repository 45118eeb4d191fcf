"""Symbolic map chains and conjugated rotations.

A :class:`MapChain` is a composition ``h_0 o h_1 o ... o h_k`` of primitive
factors (rational or real rotations, constant axis moves, twists). It is
applied right to left and inverted by reversing the factor list and
negating each parameter. A :class:`ConjugatedChain` stores
``H o phi^alpha o H^{-1}`` without ever expanding it, so any power costs one
conjugacy.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence, Union

import numpy as np

from .precision import (exact_turns, is_mp, to_complex, to_mp, to_real_mp,
                        working_precision)
from .sphere import (Complexified, circle_action,
                     circle_action_complexified, format_rational, parse_rational)
from .translations import Axis, Invariant, TwistMap, axis_apply, twist_apply

__all__ = [
    "Rotation",
    "Move",
    "MapChain",
    "ConjugatedChain",
    "evaluate_chain",
    "factor_to_dict",
    "factor_from_dict",
    "format_real",
]


def format_real(x: float) -> str:
    """Decimal string with 17 significant digits (round-trips a double)."""
    return format(float(x), ".17g")


@dataclass(frozen=True)
class Rotation:
    """``phi^alpha``; ``alpha`` is a Fraction (exact) or a float."""

    alpha: Union[Fraction, float]

    def inverse(self) -> "Rotation":
        return Rotation(-self.alpha)

    def times(self, power, like) -> np.ndarray:
        """Rotation times ``power * alpha`` mod 1 in the backend of ``like``.

        ``power`` is an integer or an integer array.
        """
        power = np.asarray(power, dtype=object)
        if isinstance(self.alpha, Fraction):
            p, q = self.alpha.numerator, self.alpha.denominator
            k = np.asarray((power * p) % q, dtype=np.int64)
            return exact_turns(k, q, like)
        t = np.mod(np.asarray(power, dtype=float) * float(self.alpha), 1.0)
        if is_mp(like):
            return to_real_mp(t)
        return t

    def apply(self, point, power: int = 1):
        like = point.w if isinstance(point, Complexified) else point
        t = self.times(power, like)
        if isinstance(point, Complexified):
            return circle_action_complexified(t, point)
        return circle_action(t, point)


@dataclass(frozen=True)
class Move:
    """Constant axis move ``k^s``."""

    axis: Axis
    s: float

    def inverse(self) -> "Move":
        return Move(self.axis, -self.s)

    def apply(self, point):
        return axis_apply(self.axis, self.s, point)


Factor = Union[Rotation, Move, TwistMap]


def _apply_factor(f: Factor, point):
    if isinstance(f, TwistMap):
        return twist_apply(f, point)
    return f.apply(point)


@dataclass(frozen=True)
class MapChain:
    """Composition of factors in mathematical order (last factor acts first)."""

    factors: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))

    def __len__(self) -> int:
        return len(self.factors)

    def inverse(self) -> "MapChain":
        return MapChain(tuple(f.inverse() for f in reversed(self.factors)))

    def compose(self, other: "MapChain") -> "MapChain":
        """``self o other``."""
        return MapChain(self.factors + other.factors)

    def apply(self, point, power: int = 1):
        chain = self if power >= 0 else self.inverse()
        out = point
        for _ in range(abs(power)):
            for f in reversed(chain.factors):
                out = _apply_factor(f, out)
        return out

    def to_list(self) -> list:
        return [factor_to_dict(f) for f in self.factors]

    @classmethod
    def from_list(cls, items: Sequence[dict]) -> "MapChain":
        return cls(tuple(factor_from_dict(x) for x in items))


@dataclass(frozen=True)
class ConjugatedChain:
    """``H o phi^alpha o H^{-1}`` stored symbolically."""

    conj: MapChain
    alpha: Union[Fraction, float]

    def inverse(self) -> "ConjugatedChain":
        return ConjugatedChain(self.conj, -self.alpha)

    def apply(self, point, power: int = 1):
        if power == 0:
            # phi^0 is the identity, so H H^{-1} cancels symbolically
            return point if isinstance(point, Complexified) else np.array(point, copy=True)
        base = self.conj.inverse().apply(point)
        moved = Rotation(self.alpha).apply(base, power)
        return self.conj.apply(moved)

    def orbit_from_base(self, zbar, powers: np.ndarray):
        """Points ``H phi^{i alpha} zbar`` for each ``i`` in ``powers`` (one base point)."""
        zbar = np.asarray(zbar).reshape(-1)
        t = Rotation(self.alpha).times(np.asarray(powers), zbar)
        pts = circle_action(t, np.broadcast_to(zbar, (len(t), zbar.shape[0])))
        return self.conj.apply(pts)

    def to_dict(self) -> dict:
        return {"conj": self.conj.to_list(), "alpha": _alpha_str(self.alpha)}

    @classmethod
    def from_dict(cls, data: dict) -> "ConjugatedChain":
        return cls(MapChain.from_list(data["conj"]), _alpha_parse(data["alpha"]))


def _alpha_str(a) -> str:
    return format_rational(a) if isinstance(a, Fraction) else format_real(a)


def _alpha_parse(text: str):
    return parse_rational(text) if "/" in text else float(text)


def evaluate_chain(chain, point, power: int = 1, precision_bits: int | None = None):
    """Evaluate ``chain^power`` at ``point``.

    For a :class:`ConjugatedChain` this is ``H(phi^{power alpha}(H^{-1} point))``.
    With ``precision_bits`` the evaluation runs on the multiple-precision
    path and the result is rounded back to ``complex128``.
    """
    if precision_bits is None:
        return chain.apply(point, power)
    with working_precision(precision_bits):
        if isinstance(point, Complexified):
            out = chain.apply(Complexified(to_mp(point.w)), power)
            return Complexified(to_complex(out.w))
        return to_complex(chain.apply(to_mp(point), power))


# ---------------------------------------------------------------- serialization

def factor_to_dict(f: Factor) -> dict:
    if isinstance(f, TwistMap):
        return {"type": "twist", "axis": str(f.axis), "amplitude": format_real(f.amplitude),
                "fn": f.fn.kind, "j": f.fn.j, "q": f.fn.q}
    if isinstance(f, Move):
        return {"type": "move", "axis": str(f.axis), "s": format_real(f.s)}
    if isinstance(f, Rotation):
        return {"type": "rotation", "alpha": _alpha_str(f.alpha)}
    raise TypeError(f"unknown factor {f!r}")


def factor_from_dict(x: dict) -> Factor:
    kind = x["type"]
    if kind == "twist":
        return TwistMap(Axis.parse(x["axis"]), float(x["amplitude"]),
                        Invariant(x["fn"], int(x["j"]), int(x["q"])))
    if kind == "move":
        return Move(Axis.parse(x["axis"]), float(x["s"]))
    if kind == "rotation":
        return Rotation(_alpha_parse(x["alpha"]))
    raise ValueError(f"unknown factor type {kind!r}")

