"""Sphere geometry on S^{2d-1} in C^d.

Real points of the sphere are complex arrays of shape ``(..., d)`` with
``z_i = x_{2i-1} + i x_{2i}``. Points of the complexification are stored as
:class:`Complexified`, which wraps the ``2d`` complex coordinates
``w_1 ... w_{2d}`` (one per real coordinate).

All maps in the package act on the complexification through the holomorphic
pair ``u_i = w_{2i-1} + i w_{2i}`` and ``v_i = w_{2i-1} - i w_{2i}``. On real
points ``u = z`` and ``v = conj(z)``, so a rotation of ``z_i`` by
``exp(2 pi i s)`` becomes ``u_i -> exp(2 pi i s) u_i`` and
``v_i -> exp(-2 pi i s) v_i``, which is polynomial in ``w`` and stays
meaningful for complex ``s``.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .precision import cis, conj, is_mp, promote, to_complex

__all__ = [
    "NORM_TOL",
    "OVERFLOW_LIMIT",
    "Complexified",
    "NumericalOverflow",
    "SupEstimate",
    "as_rational",
    "format_rational",
    "parse_rational",
    "check_unit",
    "hermitian_norm",
    "circle_action",
    "circle_action_complexified",
    "lebesgue_sample",
    "ball_sample",
    "sup_distance",
    "split_uv",
    "join_uv",
]

NORM_TOL = 1e-12
OVERFLOW_LIMIT = 1e100


class NumericalOverflow(ArithmeticError):
    """Raised when an evaluation exceeds :data:`OVERFLOW_LIMIT`."""


@dataclass(frozen=True)
class Complexified:
    """Points of the complexification C^{2d}, stored as ``w`` of shape (..., 2d)."""

    w: np.ndarray

    @property
    def dim(self) -> int:
        return self.w.shape[-1] // 2

    @property
    def u(self) -> np.ndarray:
        return self.w[..., 0::2] + 1j * self.w[..., 1::2]

    @property
    def v(self) -> np.ndarray:
        return self.w[..., 0::2] - 1j * self.w[..., 1::2]

    @classmethod
    def from_uv(cls, u: np.ndarray, v: np.ndarray) -> "Complexified":
        x = (u + v) / 2
        y = (u - v) / 2j
        w = np.empty(u.shape[:-1] + (2 * u.shape[-1],), dtype=np.result_type(x, y))
        w[..., 0::2] = x
        w[..., 1::2] = y
        return cls(w)

    @classmethod
    def from_sphere(cls, z: np.ndarray) -> "Complexified":
        """Complexification of real sphere points (imaginary parts zero)."""
        z = np.asarray(z)
        return cls.from_uv(z, conj(z))

    def real_points(self) -> np.ndarray:
        """Back to ``z`` coordinates; meaningful when ``w`` is real."""
        return self.u

    def __len__(self) -> int:
        return self.w.shape[0]


def split_uv(point):
    """Return ``(u, v, complexified)``; ``v`` is None for real sphere points."""
    if isinstance(point, Complexified):
        return point.u, point.v, True
    z = np.asarray(point)
    if not is_mp(z):
        z = z.astype(complex)
    return z, None, False


def join_uv(u, v, complexified: bool):
    return Complexified.from_uv(u, v) if complexified else u


# ---------------------------------------------------------------- rationals

def as_rational(x, max_denominator: int | None = None) -> Fraction:
    """Reduce a number (or ``"p/q"`` string) to a Fraction in [0, 1)."""
    if isinstance(x, str):
        x = parse_rational(x)
    f = Fraction(x)
    if max_denominator is not None:
        f = f.limit_denominator(max_denominator)
    return f % 1


def parse_rational(text: str) -> Fraction:
    text = text.strip()
    if "/" in text:
        p, q = text.split("/")
        q = int(q)
        if q <= 0:
            raise ValueError(f"denominator must be positive: {text!r}")
        return Fraction(int(p), q)
    return Fraction(text)


def format_rational(f: Fraction) -> str:
    return f"{f.numerator}/{f.denominator}"


# ---------------------------------------------------------------- points

def hermitian_norm(z: np.ndarray) -> np.ndarray:
    z = to_complex(z)
    return np.sqrt(np.sum(np.abs(z) ** 2, axis=-1))


def check_unit(z: np.ndarray, tol: float = NORM_TOL) -> np.ndarray:
    """Validate unit Hermitian norm and return ``z`` as an array."""
    z = np.asarray(z)
    zc = to_complex(z)
    if zc.shape[-1] < 2:
        raise ValueError("sphere points need at least two complex coordinates")
    err = np.abs(np.sum(np.abs(zc) ** 2, axis=-1) - 1.0)
    if np.any(err > tol):
        raise ValueError(f"point off the unit sphere (norm defect {np.max(err):.3g})")
    return z


def circle_action(t, z: np.ndarray) -> np.ndarray:
    """phi^t(z) = exp(2 pi i t) z on real sphere points.

    ``t`` may be a scalar or an array broadcasting against the leading axes
    of ``z``.
    """
    z = np.asarray(z)
    t = promote(np.asarray(t), z)
    if not is_mp(t):
        t = np.mod(t, 1.0)
    return z * cis(t)[..., None]


def circle_action_complexified(t, w: Complexified) -> Complexified:
    """Rotate each pair ``(w_{2i-1}, w_{2i})`` by the angle ``2 pi t``.

    Equivalent to ``u -> exp(2 pi i t) u`` and ``v -> exp(-2 pi i t) v``; the
    time ``t`` may be complex. Agrees with :func:`circle_action` on real
    points.
    """
    t = promote(np.asarray(t), w.w)
    e = cis(t)[..., None]
    e_inv = cis(-t)[..., None]
    return Complexified.from_uv(w.u * e, w.v * e_inv)


# ---------------------------------------------------------------- sampling

def lebesgue_sample(count: int, seed: int, d: int = 2) -> np.ndarray:
    """Uniform points on S^{2d-1}: normalized standard Gaussians in R^{2d}."""
    if count < 1:
        raise ValueError("count must be positive")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((count, 2 * d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g[:, 0::2] + 1j * g[:, 1::2]


def ball_sample(delta: float, count: int, seed: int, d: int = 2,
                norm: str = "euclidean") -> Complexified:
    """Points covering the complex ball B_delta in C^{2d}.

    Even-indexed samples are real sphere points scaled by a radius in
    ``(0, delta]``; odd-indexed samples are uniform in the complex ball.
    Each stratum draws from its own substream row by row, so the first ``n``
    samples do not depend on ``count`` (nested sample sets).
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if norm not in ("euclidean", "max"):
        raise ValueError(f"unknown ball norm {norm!r}")
    n_real = (count + 1) // 2
    n_cplx = count // 2
    ss_real, ss_cplx = np.random.SeedSequence(seed).spawn(2)
    rng_r = np.random.default_rng(ss_real)
    rng_c = np.random.default_rng(ss_cplx)
    k = 2 * d

    rows_r = rng_r.standard_normal((n_real, k + 1))
    x = rows_r[:, :k] / np.linalg.norm(rows_r[:, :k], axis=1, keepdims=True)
    # the spare column becomes a uniform radius through the normal cdf
    rad = delta * ndtr(rows_r[:, k]) ** (1.0 / k)
    real_pts = (x * rad[:, None]).astype(complex)

    rows_c = rng_c.standard_normal((n_cplx, 2 * k + k))
    if norm == "euclidean":
        g = rows_c[:, :k] + 1j * rows_c[:, k:2 * k]
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        r = delta * ndtr(rows_c[:, 2 * k]) ** (1.0 / (2 * k))
        cplx_pts = g * r[:, None]
    else:
        # independent uniform points in the disc |w_k| <= delta
        phase = 2 * np.pi * ndtr(rows_c[:, :k])
        r = delta * np.sqrt(ndtr(rows_c[:, k:2 * k]))
        cplx_pts = r * np.exp(1j * phase)

    w = np.empty((count, k), dtype=complex)
    w[0::2] = real_pts
    w[1::2] = cplx_pts
    return Complexified(w)


# ---------------------------------------------------------------- distance

@dataclass(frozen=True)
class SupEstimate:
    """Sampled lower estimate of the complex sup distance |f - g|_Delta."""

    value: float
    count: int
    seed: int
    overflow: bool
    powers: tuple = (1,)

    def __float__(self) -> float:
        return self.value


def sup_distance(f, g, delta: float, count: int, seed: int, d: int = 2,
                 powers: Sequence[int] = (1,), norm: str = "euclidean") -> SupEstimate:
    """Sampled estimate of max |f^i - g^i| and |f^{-i} - g^{-i}| over B_delta.

    ``f`` and ``g`` are map chains exposing ``apply(point, power)``. The value
    is a lower bound of the true sup. When any evaluation is non-finite or
    exceeds :data:`OVERFLOW_LIMIT` the estimate is ``inf`` and the overflow
    flag is set.
    """
    if f is g:
        return SupEstimate(0.0, count, seed, False, tuple(powers))
    w = ball_sample(delta, count, seed, d=d, norm=norm)
    worst = 0.0
    with np.errstate(all="ignore"):
        for i in powers:
            for sign in (1, -1):
                a = f.apply(w, sign * i)
                b = g.apply(w, sign * i)
                wa, wb = to_complex(a.w), to_complex(b.w)
                if not (np.all(np.isfinite(wa)) and np.all(np.isfinite(wb))) or \
                        max(np.max(np.abs(wa)), np.max(np.abs(wb))) > OVERFLOW_LIMIT:
                    return SupEstimate(float("inf"), count, seed, True, tuple(powers))
                worst = max(worst, float(np.max(np.linalg.norm(wa - wb, axis=-1))))
    return SupEstimate(worst, count, seed, False, tuple(powers))
