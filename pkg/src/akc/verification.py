"""Verification batteries for axis maps, twists and constructed chains.

Each battery returns a :class:`BatteryReport`. The standalone batteries
(``group``, ``commutation``, ``inverses``, ``jacobians``) draw random
parameters from a seed; :func:`run_battery` runs a battery against the
twists and chain of a stored construction.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .chain import ConjugatedChain, MapChain
from .precision import exact_turns, to_complex, to_mp, working_precision
from .sphere import circle_action, hermitian_norm, lebesgue_sample
from .translations import (Axis, Invariant, TwistMap, axis_apply, check_commutation,
                           invariant_eval, twist_apply)

__all__ = [
    "BatteryReport",
    "BATTERIES",
    "random_axes",
    "random_twists",
    "group_battery",
    "commutation_battery",
    "inverse_battery",
    "jacobian_battery",
    "periodicity_battery",
    "twist_jacobian",
    "run_battery",
]

SCHEMA_VERSION = 1
BATTERIES = ("group", "commutation", "inverses", "jacobians", "periodicity", "distribution")


@dataclass
class BatteryReport:
    battery: str
    passed: bool
    params: dict
    results: dict
    failures: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "battery": self.battery, "pass": self.passed,
                "params": self.params, "results": self.results, "failures": self.failures}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# ---------------------------------------------------------------- random inputs

def random_axes(d: int, count: int, rng: np.random.Generator) -> list:
    pool = [Axis("xi", i) for i in range(1, d + 1)] + [Axis("tau", j) for j in range(2, d + 1)]
    return [pool[k] for k in rng.integers(0, len(pool), count)]


def random_twists(d: int, count: int, seed: int, qmax: int = 50, amax: float = 1e3) -> list:
    """Random valid twists: degree ``1 ... qmax`` and amplitude ``|A| <= amax``."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        if rng.random() < 0.5:
            i = int(rng.integers(1, d + 1))
            j = int(rng.choice([k for k in range(1, d + 1) if k != i]))
            axis, fn = Axis("xi", i), Invariant("psi", j, int(rng.integers(1, qmax + 1)))
        else:
            j = int(rng.integers(2, d + 1))
            axis, fn = Axis("tau", j), Invariant("chi", j, int(rng.integers(1, qmax + 1)))
        out.append(TwistMap(axis, float(rng.uniform(-amax, amax)), fn))
    return out


# ---------------------------------------------------------------- group law

def group_battery(d: int, count: int = 10_000, seed: int = 0, tol: float = 1e-12) -> BatteryReport:
    """Period 1, additivity ``k^s k^t = k^{s+t}`` and norm preservation."""
    rng = np.random.default_rng(seed)
    z = lebesgue_sample(count, seed, d)
    s = rng.uniform(-1, 1, count)
    t = rng.uniform(-1, 1, count)
    axes = random_axes(d, count, rng)
    per = add = norm = 0.0
    for kind in sorted({(a.kind, a.index) for a in axes}):
        mask = np.array([(a.kind, a.index) == kind for a in axes])
        ax = Axis(*kind)
        zz, ss, tt = z[mask], s[mask], t[mask]
        one = axis_apply(ax, ss, zz)
        per = max(per, float(np.max(np.abs(axis_apply(ax, ss + 1, zz) - one))))
        add = max(add, float(np.max(np.abs(axis_apply(ax, ss, axis_apply(ax, tt, zz))
                                           - axis_apply(ax, ss + tt, zz)))))
        norm = max(norm, float(np.max(np.abs(hermitian_norm(one) - 1))))
    # the circle action obeys the same law
    phi_per = float(np.max(np.abs(circle_action(s + 1, z) - circle_action(s, z))))
    phi_add = float(np.max(np.abs(circle_action(s, circle_action(t, z))
                                  - circle_action(s + t, z))))
    results = {"period": max(per, phi_per), "additivity": max(add, phi_add), "norm": norm}
    failures = [k for k, v in results.items() if not v <= tol]
    return BatteryReport("group", not failures, {"d": d, "count": count, "seed": seed, "tol": tol},
                         results, failures)


# ---------------------------------------------------------------- commutation

def commutation_battery(twists: Sequence[TwistMap], alphas: Sequence[Fraction], d: int,
                        samples: int = 16, seed: int = 0, precision_bits: int = 256,
                        tol: float = 1e-10, control: bool = True) -> BatteryReport:
    """Invariance ``fn(phi^{p/q} z) = fn(z)`` and ``g phi^{p/q} = phi^{p/q} g``.

    ``alphas[k]`` is the rotation paired with ``twists[k]``; its denominator
    must be the twist degree for the identities to hold. With ``control``
    the same checks are repeated with the rotation ``1/(q + 1)`` (degree
    mismatch). The break is generic rather than universal (a high degree
    invariant is tiny on most of the sphere), so the median deviation over
    twists must exceed ``1e-3``; the smallest one is reported too.
    """
    inv = comm = 0.0
    control_devs = []
    for k, (g, a) in enumerate(zip(twists, alphas)):
        z = lebesgue_sample(samples, seed + k, d)
        a = Fraction(a)
        with working_precision(precision_bits):
            zm = to_mp(z)
            rot = exact_turns(np.array(a.numerator), a.denominator, zm)
            lhs = invariant_eval(g.fn, circle_action(rot, zm))
            rhs = invariant_eval(g.fn, zm)
            inv = max(inv, float(np.max(np.abs(to_complex(lhs - rhs)))))
        comm = max(comm, check_commutation(g, a, z, precision_bits=precision_bits))
        if control and g.amplitude != 0:
            bad = Fraction(1, g.fn.q + 1)
            control_devs.append(check_commutation(g, bad, z, precision_bits=precision_bits))
    results = {"invariance": inv, "commutation": comm}
    failures = [k for k, v in results.items() if not v <= tol]
    if control and control_devs:
        results["mismatch_control"] = float(np.median(control_devs))
        results["mismatch_control_min"] = float(np.min(control_devs))
        if not results["mismatch_control"] > 1e-3:
            failures.append("mismatch_control")
    return BatteryReport("commutation", not failures,
                         {"twists": len(twists), "samples": samples, "seed": seed,
                          "precision_bits": precision_bits, "tol": tol}, results, failures)


# ---------------------------------------------------------------- inverses

def inverse_battery(twists: Sequence[TwistMap], d: int, seed: int = 0,
                    precision_bits: Optional[int] = 256, tol: float = 1e-10,
                    chain: Optional[MapChain] = None, samples: int = 1) -> BatteryReport:
    """Round trip ``g^{-1} g z = z`` for each twist (and for ``chain``)."""
    worst = 0.0
    if twists:
        pts = lebesgue_sample(samples * len(twists), seed, d).reshape(len(twists), samples, d)
        for g, p in zip(twists, pts):
            back = _roundtrip(MapChain((g,)), p, precision_bits)
            worst = max(worst, float(np.max(np.abs(back - p))))
    results = {"twists": worst}
    if chain is not None:
        p = lebesgue_sample(64, seed + 1, d)
        results["chain"] = float(np.max(np.abs(_roundtrip(chain, p, precision_bits) - p)))
    failures = [k for k, v in results.items() if not v <= tol]
    return BatteryReport("inverses", not failures,
                         {"twists": len(twists), "seed": seed, "precision_bits": precision_bits,
                          "tol": tol}, results, failures)


def _roundtrip(chain: MapChain, p: np.ndarray, bits: Optional[int]) -> np.ndarray:
    if bits is None:
        return chain.inverse().apply(chain.apply(p))
    with working_precision(bits):
        return to_complex(chain.inverse().apply(chain.apply(to_mp(p))))


# ---------------------------------------------------------------- jacobians

def _mp_tangent_basis(x: np.ndarray) -> np.ndarray:
    """Orthonormal tangent basis (columns) at the unit vector ``x`` (object array).

    Gram-Schmidt on ``x`` followed by the coordinate vectors, at working
    precision; the coordinate vector most aligned with ``x`` is dropped.
    """
    import gmpy2

    n = x.shape[0]
    drop = int(np.argmax([abs(float(c)) for c in x]))
    basis = [x / gmpy2.sqrt(np.dot(x, x))]
    for k in range(n):
        if k == drop:
            continue
        v = np.array([gmpy2.mpfr(1 if i == k else 0) for i in range(n)], dtype=object)
        for b in basis:
            v = v - np.dot(v, b) * b
        basis.append(v / gmpy2.sqrt(np.dot(v, v)))
    return np.column_stack(basis[1:])


def _mp_det(m: np.ndarray):
    """Determinant by Gaussian elimination with partial pivoting (object array)."""
    a = m.copy()
    n = a.shape[0]
    det = 1
    for c in range(n):
        piv = max(range(c, n), key=lambda r: abs(a[r, c]))
        if a[piv, c] == 0:
            return a[piv, c]
        if piv != c:
            a[[c, piv]] = a[[piv, c]]
            det = -det
        det = det * a[c, c]
        for r in range(c + 1, n):
            a[r] = a[r] - (a[r, c] / a[c, c]) * a[c]
    return det


def twist_jacobian(g, z: np.ndarray, precision_bits: int = 256, h: float = 1e-30) -> tuple:
    """Tangential Jacobian determinant of ``g`` at a sphere point.

    Central differences are taken in ``R^{2d}`` on the multiple-precision
    path, then projected between orthonormal tangent bases at ``z`` and
    ``g(z)``; the projection and determinant also run at working precision
    because the entries grow with the twist amplitude and degree. Returns
    ``(tangential det, full det in R^{2d})``.
    """
    import gmpy2

    d = z.shape[0]
    apply = g.apply if hasattr(g, "apply") else (lambda p: twist_apply(g, p))

    def f(rows):
        c = np.empty((len(rows), d), dtype=object)
        for r, row in enumerate(rows):
            for k in range(d):
                c[r, k] = gmpy2.mpc(row[2 * k], row[2 * k + 1])
        out = apply(c)
        res = np.empty((len(rows), 2 * d), dtype=object)
        for r in range(len(rows)):
            for k in range(d):
                res[r, 2 * k] = out[r, k].real
                res[r, 2 * k + 1] = out[r, k].imag
        return res

    with working_precision(precision_bits):
        zm = to_mp(z)
        xm = np.array([p for c in zm for p in (c.real, c.imag)], dtype=object)
        xm = xm / gmpy2.sqrt(np.dot(xm, xm))
        hm = gmpy2.mpfr(h)
        rows = []
        for k in range(2 * d):
            e = np.array([gmpy2.mpfr(1 if i == k else 0) for i in range(2 * d)], dtype=object)
            rows += [xm + hm * e, xm - hm * e]
        vals = f(rows)
        J = np.column_stack([(vals[2 * k] - vals[2 * k + 1]) / (2 * hm) for k in range(2 * d)])
        y = f([xm])[0]
        T_in = _mp_tangent_basis(xm)
        T_out = _mp_tangent_basis(y)
        tangential = _mp_det(T_out.T.dot(J).dot(T_in))
        full = _mp_det(J)
        return float(tangential), float(full)


def jacobian_battery(twists: Sequence, d: int, points: int = 1000, seed: int = 0,
                     precision_bits: int = 256, tol: float = 1e-6) -> BatteryReport:
    """``|det|`` of the tangential Jacobian within ``tol`` of 1 (volume preservation)."""
    z = lebesgue_sample(points, seed, d)
    worst_t = worst_f = 0.0
    for k in range(points):
        g = twists[k % len(twists)]
        dt, df = twist_jacobian(g, z[k], precision_bits)
        worst_t = max(worst_t, abs(abs(dt) - 1))
        worst_f = max(worst_f, abs(abs(df) - 1))
    results = {"tangential": worst_t, "ambient": worst_f}
    failures = [] if worst_t <= tol else ["tangential"]
    return BatteryReport("jacobians", not failures,
                         {"points": points, "seed": seed, "precision_bits": precision_bits,
                          "tol": tol}, results, failures)


# ---------------------------------------------------------------- periodicity

def periodicity_battery(chain: ConjugatedChain, d: int, points: int = 16, seed: int = 0,
                        precision_bits: int = 256, tol: float = 1e-8) -> BatteryReport:
    """``f^q(x) = x`` for ``f = H phi^{p/q} H^{-1}``, plus power additivity."""
    q = Fraction(chain.alpha).denominator
    x = lebesgue_sample(points, seed, d)
    rng = np.random.default_rng(seed)
    i, j = (int(v) for v in rng.integers(1, max(q, 2), 2))
    with working_precision(precision_bits):
        xm = to_mp(x)
        per = float(np.max(np.abs(to_complex(chain.apply(xm, q)) - x)))
        lhs = to_complex(chain.apply(xm, i + j))
        rhs = to_complex(chain.apply(chain.apply(xm, i), j))
        add = float(np.max(np.abs(lhs - rhs)))
        zero = float(np.max(np.abs(to_complex(chain.apply(xm, 0)) - x)))
    results = {"period": per, "additivity": add, "power_zero": zero, "q": q, "i": i, "j": j}
    failures = [k for k in ("period", "additivity", "power_zero") if not results[k] <= tol]
    return BatteryReport("periodicity", not failures,
                         {"points": points, "seed": seed, "precision_bits": precision_bits,
                          "tol": tol}, results, failures)


# ---------------------------------------------------------------- stored runs

def run_battery(name: str, run, seed: int = 0) -> BatteryReport:
    """Run battery ``name`` against a loaded construction (see :mod:`akc.manifest`).

    ``run`` provides ``config``, ``twists`` (list of lists, one per outer
    stage), ``alphas`` (matching lists of slot rationals), ``chain`` (the
    final :class:`ConjugatedChain`) and ``C0``.
    """
    if name not in BATTERIES:
        raise KeyError(f"unknown battery {name!r}")
    cfg = run.config
    d = cfg.d
    bits = cfg.precision_bits
    twists = [g for stage in run.twists for g in stage if g.amplitude != 0]
    alphas = [a for stage, al in zip(run.twists, run.alphas)
              for g, a in zip(stage, al) if g.amplitude != 0]
    if name == "group":
        return group_battery(d, 10_000, seed)
    if name == "commutation":
        return commutation_battery(twists, alphas, d, seed=seed, precision_bits=bits)
    if name == "inverses":
        return inverse_battery(twists, d, seed, bits, chain=run.chain.conj, samples=4)
    if name == "jacobians":
        return jacobian_battery(twists, d, points=max(len(twists), 16), seed=seed,
                                precision_bits=bits)
    if name == "periodicity":
        return periodicity_battery(run.chain, d, seed=seed, precision_bits=bits)
    return _distribution_battery(run, seed)


def _distribution_battery(run, seed: int) -> BatteryReport:
    """Recompute final orbits through a few test bases and rerun the reports.

    The along-directions test uses the last stage's ladder on the inner
    orbit ``h_N(phi^k zbar)``; the uniform-distribution test uses the full
    orbit ``H_N(phi^k zbar)`` in X.
    """
    from .engine import test_ensemble
    from .equidistribution import OrbitSample, test_CUD, test_UD_along

    cfg = run.config
    chain = run.chain
    M1 = 6 * cfg.d - 3
    inner = MapChain(chain.conj.factors[-M1:])
    outer = MapChain(chain.conj.factors[:-M1])
    dirs = [f.axis for f in inner.factors]
    bases, labels = test_ensemble(cfg.d, 4, seed)
    q = Fraction(chain.alpha).denominator
    rows, failures = [], []
    for z, label in zip(bases, labels):
        with working_precision(cfg.precision_bits):
            pts = inner.apply(ConjugatedChain(MapChain(), chain.alpha).orbit_from_base(
                to_mp(z), np.arange(q)))
            inner_orbit = to_complex(pts)
            full_orbit = to_complex(outer.apply(pts))
        ud = test_UD_along(OrbitSample(inner_orbit), z, dirs, cfg.eps_report, nballs=cfg.nballs,
                           seed=seed, reference_size=cfg.ref_size, alpha=cfg.alpha_test)
        cud = test_CUD(OrbitSample(full_orbit), run.C0, cfg.cud_eps, cfg.nballs, seed=seed)
        rows.append({"point": label, "ud": ud.passed, "cud": cud.passed,
                     "cud_ratio": cud.worst["ratio"]})
        if not (ud.passed and cud.passed):
            failures.append(label)
    return BatteryReport("distribution", not failures,
                         {"seed": seed, "orbit_length": q, "C0": run.C0}, {"points": rows},
                         failures)
