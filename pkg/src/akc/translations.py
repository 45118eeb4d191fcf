"""Rotation families xi_i, tau_i, invariant polynomials and twist maps.

``xi_i^s`` multiplies ``z_i`` by ``exp(2 pi i s)``. ``tau_i^s`` (``i >= 2``)
multiplies ``z_1 + z_i`` by ``exp(2 pi i s)`` and keeps ``z_1 - z_i`` fixed.
Both are unitary, commute with the circle action and have period one in
``s``.

A twist ``axis^{A * f(z)}`` uses an invariant polynomial ``f`` that is
constant along the axis flow, so its inverse is the same twist with ``-A``:

* ``xi_i`` pairs with ``psi_{j,q}(z) = Re(z_j^q)`` for ``j != i``;
* ``tau_i`` pairs with ``chi_{i,q}(z) = Re((z_1 - z_i)^q)``.

Indices follow the mathematical convention and start at 1.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from .precision import (cis, exact_turns, promote, real_part, to_complex, to_mp,
                        to_real, working_precision)
from .sphere import (OVERFLOW_LIMIT, Complexified, NumericalOverflow,
                     circle_action, join_uv, lebesgue_sample, split_uv)

__all__ = [
    "Axis",
    "Invariant",
    "TwistMap",
    "xi_apply",
    "tau_apply",
    "axis_apply",
    "invariant_eval",
    "twist_apply",
    "twist_invert",
    "check_commutation",
]


@dataclass(frozen=True)
class Axis:
    """One-parameter rotation family: ``kind`` is ``"xi"`` or ``"tau"``."""

    kind: str
    index: int

    def __post_init__(self):
        if self.kind not in ("xi", "tau"):
            raise ValueError(f"unknown axis kind {self.kind!r}")
        if self.kind == "tau" and self.index < 2:
            raise ValueError("tau_i needs i >= 2")
        if self.index < 1:
            raise ValueError("axis index starts at 1")

    def validate(self, d: int) -> None:
        if self.index > d:
            raise ValueError(f"{self} out of range for d={d}")

    def __str__(self) -> str:
        return f"{self.kind}{self.index}"

    @classmethod
    def parse(cls, text: str) -> "Axis":
        text = text.strip()
        for kind in ("xi", "tau"):
            if text.startswith(kind):
                return cls(kind, int(text[len(kind):]))
        raise ValueError(f"cannot parse axis {text!r}")


@dataclass(frozen=True)
class Invariant:
    """``psi_{j,q}`` (``kind="psi"``) or ``chi_{j,q}`` (``kind="chi"``)."""

    kind: str
    j: int
    q: int

    def __post_init__(self):
        if self.kind not in ("psi", "chi"):
            raise ValueError(f"unknown invariant kind {self.kind!r}")
        if self.q < 1:
            raise ValueError("degree q must be >= 1")
        if self.kind == "chi" and self.j < 2:
            raise ValueError("chi_{j,q} needs j >= 2")
        if self.j < 1:
            raise ValueError("index starts at 1")

    def __str__(self) -> str:
        return f"{self.kind}{self.j},{self.q}"


def _pairing_ok(axis: Axis, fn: Invariant) -> bool:
    if axis.kind == "xi":
        return fn.kind == "psi" and fn.j != axis.index
    return fn.kind == "chi" and fn.j == axis.index


@dataclass(frozen=True)
class TwistMap:
    """The map ``z -> axis^{A * fn(z)}(z)``."""

    axis: Axis
    amplitude: float
    fn: Invariant

    def __post_init__(self):
        if not _pairing_ok(self.axis, self.fn):
            raise ValueError(f"{self.fn} is not invariant along {self.axis}")

    def inverse(self) -> "TwistMap":
        return replace(self, amplitude=-self.amplitude)

    def __str__(self) -> str:
        return f"{self.axis}^({self.amplitude:.6g}*{self.fn})"


# ---------------------------------------------------------------- kernels

def _rotate(u, v, i: int, s):
    u = u.copy()
    e = cis(s)
    u[..., i] = u[..., i] * e
    if v is not None:
        v = v.copy()
        v[..., i] = v[..., i] * cis(-s)
    return u, v


def _tau(u, v, i: int, s):
    def mix(a, e):
        a = a.copy()
        total = a[..., 0] + a[..., i]
        diff = a[..., 0] - a[..., i]
        a[..., 0] = (e * total + diff) / 2
        a[..., i] = (e * total - diff) / 2
        return a

    u2 = mix(u, cis(s))
    v2 = mix(v, cis(-s)) if v is not None else None
    return u2, v2


def _real_param(s, complexified: bool, like=None):
    """Axis parameter in the backend of ``like``; real unless ``complexified``."""
    s = np.asarray(s)
    if not complexified:
        s = real_part(s) if s.dtype == object else np.real(s)
    # a double parameter on mp points would cap the move at double accuracy
    return promote(s, like)


def xi_apply(i: int, s, point):
    """Apply ``xi_i^s``: multiply coordinate ``i`` by ``exp(2 pi i s)``.

    ``point`` is an array of sphere points or a :class:`Complexified` batch;
    ``s`` is a scalar or an array over the leading axes and may be complex
    on complexified points.
    """
    u, v, cx = split_uv(point)
    u, v = _rotate(u, v, i - 1, _real_param(s, cx, u))
    return join_uv(u, v, cx)


def tau_apply(i: int, s, point):
    """Apply ``tau_i^s``: ``z_1 + z_i`` gains ``exp(2 pi i s)``, ``z_1 - z_i`` is fixed."""
    if i < 2:
        raise ValueError("tau_i needs i >= 2")
    u, v, cx = split_uv(point)
    u, v = _tau(u, v, i - 1, _real_param(s, cx, u))
    return join_uv(u, v, cx)


def axis_apply(axis: Axis, s, point):
    if axis.kind == "xi":
        return xi_apply(axis.index, s, point)
    return tau_apply(axis.index, s, point)


def invariant_eval(fn: Invariant, point, strict: bool = False):
    """Evaluate ``psi`` or ``chi``; complex-valued on complexified points.

    With ``strict=True`` a :class:`NumericalOverflow` is raised when a value
    is non-finite or exceeds :data:`OVERFLOW_LIMIT`.
    """
    u, v, cx = split_uv(point)
    if fn.kind == "psi":
        a = u[..., fn.j - 1]
        b = v[..., fn.j - 1] if cx else None
    else:
        a = u[..., 0] - u[..., fn.j - 1]
        b = v[..., 0] - v[..., fn.j - 1] if cx else None
    with np.errstate(all="ignore"):
        if cx:
            val = (a ** fn.q + b ** fn.q) / 2
        else:
            val = real_part(a ** fn.q)
    if strict:
        mag = np.abs(to_complex(val)) if cx else np.abs(to_real(val))
        if not np.all(np.isfinite(mag)) or np.any(mag > OVERFLOW_LIMIT):
            raise NumericalOverflow(f"{fn} exceeded {OVERFLOW_LIMIT:g}")
    return val


def twist_apply(t: TwistMap, point, strict: bool = False):
    """Apply ``axis^{A * fn(point)}`` pointwise."""
    if t.amplitude == 0:
        return point if isinstance(point, Complexified) else np.array(point, copy=True)
    s = t.amplitude * invariant_eval(t.fn, point, strict=strict)
    with np.errstate(all="ignore"):
        return axis_apply(t.axis, s, point)


def twist_invert(t: TwistMap, point, strict: bool = False):
    """Inverse twist: the same axis and invariant with amplitude ``-A``."""
    return twist_apply(t.inverse(), point, strict=strict)


def check_commutation(t: TwistMap, alpha: Fraction, samples,
                      precision_bits: int | None = None) -> float:
    """Max of ``|g(phi^alpha z) - phi^alpha(g z)|`` over sample points.

    ``samples`` is an array of sphere points or an integer count of Lebesgue
    samples (seed 0) at the dimension implied by the twist. With
    ``precision_bits`` the check runs on the multiple-precision path with the
    rotation time ``p/q`` rounded at that precision instead of to a double.
    """
    if isinstance(samples, (int, np.integer)):
        d = max(t.axis.index, t.fn.j, 2)
        samples = lebesgue_sample(int(samples), seed=0, d=d)
    alpha = Fraction(alpha)
    if precision_bits is None:
        a = float(alpha)
        lhs = twist_apply(t, circle_action(a, samples))
        rhs = circle_action(a, twist_apply(t, samples))
        return float(np.max(np.abs(to_complex(lhs) - to_complex(rhs))))
    with working_precision(precision_bits):
        z = to_mp(samples)
        a = exact_turns(np.array(alpha.numerator), alpha.denominator, z)
        lhs = twist_apply(t, circle_action(a, z))
        rhs = circle_action(a, twist_apply(t, z))
        return float(np.max(np.abs(to_complex(lhs - rhs))))
