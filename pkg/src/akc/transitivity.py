"""Constructive transitivity of the xi/tau families on the sphere.

Move sequences are lists of ``(Axis, s)`` in product order: the sequence
``[(k_0, s_0), ..., (k_L, s_L)]`` denotes ``k_0^{s_0} ... k_L^{s_L}`` and is
applied to a point from the right, so the last move acts first.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .sphere import check_unit
from .translations import Axis, TwistMap, axis_apply, twist_apply

__all__ = [
    "MoveSequence",
    "StartCase",
    "IntegrityError",
    "apply_moves",
    "solve_two_coord",
    "realize_moduli",
    "realize_point",
    "transitive_axes",
    "start_dichotomy",
    "dichotomy_eta",
]

MoveSequence = list  # list of (Axis, float) in product order


class IntegrityError(RuntimeError):
    """A guaranteed case of the starting dichotomy was not found."""


def _turns(angle: float) -> float:
    t = float(np.mod(angle / (2 * np.pi), 1.0))
    # a tiny negative angle rounds up to exactly 1.0
    return 0.0 if t >= 1.0 else t


def apply_moves(moves: Sequence[tuple[Axis, float]], z: np.ndarray) -> np.ndarray:
    """Apply ``k_0^{s_0} ... k_L^{s_L}`` to ``z`` (rightmost factor first)."""
    out = np.array(z, dtype=complex)
    for axis, s in reversed(list(moves)):
        out = axis_apply(axis, s, out)
    return out


def solve_two_coord(z: np.ndarray, j: int, rho1: float, rhoj: float,
                    tol: float = 1e-10) -> tuple[float, float]:
    """Find ``(t, s)`` with ``|z'_1| = rho1`` and ``|z'_j| = rhoj``.

    Here ``z' = tau_j^s xi_j^t z``. The time ``t`` aligns the phases of the
    two contributions to ``z'_1`` so that ``|z'_1| = |r_1 cos(pi s) - r_j
    sin(pi s)|``, a function that falls from ``r_1`` to 0 and then rises to
    ``sqrt(r_1^2 + r_j^2)`` as ``s`` runs over ``[0, 1)``. A bracketing root
    finder is then run on the relevant monotone branch.

    Raises
    ------
    ValueError
        If ``rho1^2 + rhoj^2`` differs from ``|z_1|^2 + |z_j|^2`` by more
        than ``tol``.
    """
    z = np.asarray(z, dtype=complex)
    if j < 2 or j > z.shape[-1]:
        raise ValueError(f"index j={j} out of range")
    r1, rj = abs(z[0]), abs(z[j - 1])
    if rho1 < 0 or rhoj < 0:
        raise ValueError("target moduli must be nonnegative")
    if abs(rho1 ** 2 + rhoj ** 2 - r1 ** 2 - rj ** 2) > tol:
        raise ValueError("target moduli do not match |z_1|^2 + |z_j|^2")
    if abs(r1 - rho1) <= 1e-15 and abs(rj - rhoj) <= 1e-15:
        return 0.0, 0.0
    radius = np.hypot(r1, rj)
    if radius == 0.0:
        return 0.0, 0.0
    rho1 = min(rho1, radius)
    t = _turns(np.angle(z[0]) - np.angle(z[j - 1])) + 0.25 if rj > 0 else 0.0
    t = float(np.mod(t, 1.0))
    phi = np.arctan2(rj, r1)

    def modulus(s: float) -> float:
        return radius * np.cos(np.pi * s + phi)

    s_zero = (np.pi / 2 - phi) / np.pi
    if rho1 <= r1:
        lo, hi, f = 0.0, s_zero, (lambda s: modulus(s) - rho1)
    else:
        lo, hi, f = s_zero, (np.pi - phi) / np.pi, (lambda s: -modulus(s) - rho1)
    f_lo, f_hi = f(lo), f(hi)
    if f_lo * f_hi >= 0.0:
        # target sits at a branch end (up to rounding)
        s = lo if abs(f_lo) <= abs(f_hi) else hi
    else:
        s = brentq(f, lo, hi, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=200)
    return t, float(np.mod(s, 1.0))


def realize_moduli(z: np.ndarray, rho: Sequence[float]) -> MoveSequence:
    """Moves ``tau_2 xi_2 ... tau_d xi_d tau_2 xi_2 ... tau_d xi_d`` reaching moduli ``rho``.

    The first pass (applied first, rightmost) empties ``z_d, ..., z_2`` into
    ``z_1``; the second pass hands each ``z_j`` its target modulus. The
    sequence always has ``4d - 4`` moves.
    """
    z = check_unit(np.asarray(z, dtype=complex), tol=1e-10)
    rho = np.asarray(rho, dtype=float)
    d = z.shape[-1]
    if rho.shape != (d,) or np.any(rho < 0):
        raise ValueError("rho must hold d nonnegative moduli")
    if abs(np.sum(rho ** 2) - 1.0) > 1e-10:
        raise ValueError("target moduli must satisfy sum rho_j^2 = 1")

    if np.max(np.abs(np.abs(z) - rho)) <= 1e-12:
        # moduli already match: the same pattern with every parameter zero
        block = [m for j in range(2, d + 1) for m in ((Axis("tau", j), 0.0), (Axis("xi", j), 0.0))]
        return block + block

    first, second = [], []
    cur = z.copy()
    for j in range(d, 1, -1):
        pool = np.hypot(abs(cur[0]), abs(cur[j - 1]))
        t, s = solve_two_coord(cur, j, pool, 0.0)
        block = [(Axis("tau", j), s), (Axis("xi", j), t)]
        cur = apply_moves(block, cur)
        first = block + first
    for j in range(d, 1, -1):
        pool = np.hypot(abs(cur[0]), abs(cur[j - 1]))
        target_j = min(rho[j - 1], pool)
        target_1 = np.sqrt(max(pool ** 2 - target_j ** 2, 0.0))
        t, s = solve_two_coord(cur, j, target_1, target_j)
        block = [(Axis("tau", j), s), (Axis("xi", j), t)]
        cur = apply_moves(block, cur)
        second = block + second
    return second + first


def transitive_axes(d: int) -> list[Axis]:
    """Directions ``k_0 ... k_{5d-4}``: ``xi_1, tau_2, xi_2..xi_d`` then two ``tau_j xi_j`` passes."""
    axes = [Axis("xi", 1), Axis("tau", 2)] + [Axis("xi", j) for j in range(2, d + 1)]
    block = []
    for j in range(2, d + 1):
        block += [Axis("tau", j), Axis("xi", j)]
    return axes + block + block


def realize_point(z: np.ndarray, target: np.ndarray) -> MoveSequence:
    """Moves along ``k_0 ... k_{5d-4}`` sending ``z`` to ``target``.

    Moduli are set first by the last ``4d - 4`` moves; the phases are then
    matched by ``xi_1, xi_2, ..., xi_d`` with the ``tau_2`` slot left at 0.
    """
    z = check_unit(np.asarray(z, dtype=complex), tol=1e-10)
    target = check_unit(np.asarray(target, dtype=complex), tol=1e-10)
    if z.shape != target.shape:
        raise ValueError("points live in different dimensions")
    d = z.shape[-1]
    moduli = realize_moduli(z, np.abs(target))
    cur = apply_moves(moduli, z)
    phases = []
    for j in range(1, d + 1):
        if abs(target[j - 1]) > 0 and abs(cur[j - 1]) > 0:
            phases.append(_turns(np.angle(target[j - 1]) - np.angle(cur[j - 1])))
        else:
            phases.append(0.0)
    head = [(Axis("xi", 1), phases[0]), (Axis("tau", 2), 0.0)]
    head += [(Axis("xi", j), phases[j - 1]) for j in range(2, d + 1)]
    return head + moduli


# ---------------------------------------------------------------- dichotomy

def dichotomy_eta(d: int) -> float:
    return 1.0 / 4 ** (d + 1)


@dataclass(frozen=True)
class StartCase:
    """``case == 1``: ``|z_1| > eta``; ``case == 2``: ``|z_1 - z_j| > eta`` after the tail twists."""

    case: int
    j: Optional[int]
    z: np.ndarray
    margin: float


def start_dichotomy(zbar: np.ndarray, ladder: Optional[Sequence[TwistMap]] = None) -> StartCase:
    """Classify a point by the starting dichotomy with ``eta = 1/4^{d+1}``.

    ``ladder`` lists the twists ``g_0 ... g_{6d-4}``; missing entries (None)
    act as the identity. For Case 2 the returned point is
    ``z = g_{6d-j-2} ... g_{6d-4} zbar`` for the smallest valid ``j``.
    """
    zbar = check_unit(np.asarray(zbar, dtype=complex), tol=1e-10)
    d = zbar.shape[-1]
    eta = dichotomy_eta(d)
    top = 6 * d - 4
    if ladder is None:
        ladder = [None] * (top + 1)
    if len(ladder) != top + 1:
        raise ValueError(f"ladder must have {top + 1} slots")
    if abs(zbar[0]) > eta:
        return StartCase(1, None, zbar, abs(zbar[0]) - eta)
    cur = zbar
    for j in range(2, d + 1):
        # the tail g_{6d-j-2} ... g_{6d-4} grows by one factor on the left
        g = ladder[6 * d - j - 2]
        if g is not None:
            cur = twist_apply(g, cur)
        gap = abs(cur[0] - cur[j - 1])
        if gap > eta:
            return StartCase(2, j, cur, gap - eta)
    raise IntegrityError("no case of the starting dichotomy holds")
