import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from akc.chain import ConjugatedChain, MapChain
from akc.config import parse_config
from akc.engine import (InnerContext, approximate_start, build_ladder, choose_amplitude,
                        choose_next_rational, closeness_powers, orbit_points,
                        rational_candidates, run_inner_induction, test_ensemble)
from akc.manifest import load_run
from akc.transitivity import dichotomy_eta, start_dichotomy
from akc.translations import Axis, Invariant, TwistMap

from conftest import TINY_CONFIG


# ---------------------------------------------------------------- ladder

def test_ladder_d2_pattern():
    ladder = build_ladder(2)
    assert ladder.M == 8
    got = [(str(s.axis), s.fn_kind, s.fn_j) for s in ladder.slots]
    expect = [("xi1", "psi", 2), ("tau2", "chi", 2), ("xi2", "psi", 1), ("tau2", "chi", 2),
              ("xi2", "psi", 1), ("tau2", "chi", 2), ("xi2", "psi", 1), ("tau2", "chi", 2),
              ("xi2", "psi", 1)]
    assert got == expect


@pytest.mark.parametrize("d", [2, 3, 4, 5])
def test_ladder_size_and_pairing(d):
    ladder = build_ladder(d)
    assert len(ladder.slots) == 6 * d - 3 and ladder.M == 6 * d - 4
    for s in ladder.slots:
        assert (s.axis.kind == "tau") == (s.fn_kind == "chi")
        assert s.amplitude is None and s.degree is None
        # every pairing is a valid twist
        s.with_params(1.0, 3)
    # the tau slots use chi with their own index
    assert all(s.fn_j == s.axis.index for s in ladder.slots if s.axis.kind == "tau")


def test_ladder_rejects_d1_and_unset_slot():
    with pytest.raises(ValueError):
        build_ladder(1)
    with pytest.raises(ValueError):
        build_ladder(2).slots[0].twist()


def test_ladder_serialization_round_trip():
    ladder = build_ladder(3)
    for k, s in enumerate(ladder.slots):
        s.amplitude, s.degree = 2.0 ** k, 2 ** (k % 5)
    back = type(ladder).from_list(3, ladder.to_list())
    assert back.to_list() == ladder.to_list()
    assert back.chain().factors == ladder.chain().factors


# ---------------------------------------------------------------- rationals

def test_candidates_multiple_policy():
    got = [c for _, c in zip(range(4), rational_candidates(Fraction(1, 2)))]
    assert got == [Fraction(1, 4), Fraction(3, 8), Fraction(7, 16), Fraction(15, 32)]


def test_candidates_increment_policy():
    got = [c for _, c in zip(range(3), rational_candidates(Fraction(1, 2), "increment"))]
    # denominators q + 1, q + 2, q + 4; numerators coprime and nearest to q/2
    assert got == [Fraction(1, 3), Fraction(1, 4), Fraction(1, 6)]


def test_candidates_respect_caps():
    assert list(rational_candidates(Fraction(1, 2), cap=16)) == [
        Fraction(1, 4), Fraction(3, 8), Fraction(7, 16)]
    assert next(rational_candidates(Fraction(1, 2), min_denominator=100)).denominator == 128
    with pytest.raises(ValueError):
        next(rational_candidates(Fraction(1, 2), "random"))


@settings(max_examples=60, deadline=None)
@given(p=st.integers(0, 200), q=st.integers(1, 200))
def test_candidates_are_reduced_and_distinct(p, q):
    alpha = Fraction(p % q, q)
    for _, c in zip(range(5), rational_candidates(alpha)):
        assert c != alpha and 0 <= c < 1
        assert c.denominator % alpha.denominator == 0


def test_next_rational_loose_budget():
    prev = ConjugatedChain(MapChain(), Fraction(1, 2))
    nxt, info = choose_next_rational(Fraction(1, 2), MapChain(), prev, 1.05, 1e9)
    assert nxt == Fraction(1, 4)
    assert info["closeness_met"] and not info["exhausted"]


def test_next_rational_rejects_zero_budget():
    prev = ConjugatedChain(MapChain(), Fraction(1, 2))
    with pytest.raises(ValueError):
        choose_next_rational(Fraction(1, 2), MapChain(), prev, 1.05, 0.0)


def test_next_rational_monotone_in_budget():
    # one twist at a small radius keeps the distance measurable
    g = TwistMap(Axis("xi", 1), 1.0, Invariant("psi", 2, 2))
    conj = MapChain((g,))
    prev = ConjugatedChain(conj, Fraction(1, 2))
    qs = []
    for budget in (10.0, 1.0, 0.3, 0.1, 0.03):
        nxt, info = choose_next_rational(Fraction(1, 2), conj, prev, 0.05, budget, power_cap=8,
                                         random_powers=0, count=16, seed=3, denom_cap=4096)
        qs.append(nxt.denominator if not info["exhausted"] else np.inf)
    assert qs == sorted(qs)
    assert qs[0] < qs[-1]


def test_approximate_start_and_powers():
    assert approximate_start(Fraction(1, 2), 0.025) == Fraction(1, 2)
    assert approximate_start(0.3, 0.01) == Fraction(3, 10)
    assert approximate_start(Fraction(1, 2), 1e99) == 0
    assert closeness_powers(5, 100, 10, 0) == [1, 2, 3, 4, 5]
    p = closeness_powers(1000, 10, 5, 0)
    assert p[:10] == list(range(1, 11)) and p[-1] == 1000 and len(p) <= 16


def test_ensemble_covers_both_dichotomy_cases():
    pts, labels = test_ensemble(2, 4, 0)
    assert len(pts) == len(labels) == 4 + 3 + 2 + 3
    assert np.allclose(np.linalg.norm(pts, axis=1), 1)
    assert {"z1=0", "z1=z2", "eta", "eta-", "eta+"} <= set(labels)
    cases = {start_dichotomy(z).case for z in pts}
    assert cases == {1, 2}
    eta = dichotomy_eta(2)
    assert abs(abs(pts[labels.index("eta")][0]) - eta) < 1e-15


# ---------------------------------------------------------------- amplitude search

def test_amplitude_search_degenerate_point_not_triggered():
    cfg = parse_config(TINY_CONFIG)
    ctx = InnerContext(cfg, Fraction(1, 2))
    # slots 0 and 1 set to the identity so slot 2 (xi_2 psi_1) can be searched
    for k in (0, 1):
        ctx.ladder.slots[k].amplitude, ctx.ladder.slots[k].degree = 0.0, 1
    ctx.alphas = [Fraction(1, 2), Fraction(1, 4), Fraction(1, 8)]
    A, info = choose_amplitude(ctx, 2, cfg.eps0)
    trans = {t["point"]: t for t in info["transversality"]}
    # psi_1 vanishes identically on the xi_2 orbit of z_1 = 0: the twist is never triggered
    assert not trans["z1=0"]["pass"]
    assert trans["z1=0"]["measure"] == 1.0
    assert trans["z2=0"]["pass"]
    # the search starts at A = 1: the identity twist is never accepted
    assert A >= 1
    assert all(float(s["A"]) >= 1 for s in info["search"])


# ---------------------------------------------------------------- end-to-end (tiny)

@pytest.fixture(scope="module")
def tiny(tiny_run):
    out, code = tiny_run
    return load_run(out), out, code


def test_tiny_run_structure(tiny):
    run, out, code = tiny
    assert code in (0, 1)
    assert len(run.ladders) == 1 and len(run.ladders[0].slots) == 9
    assert all(s.amplitude is not None for s in run.ladders[0].slots)
    alphas = run.alphas[0]
    assert alphas[0] == Fraction(1, 2) and len(alphas) == 10
    # degrees match the slot rationals and denominators are nested multiples
    for s, a in zip(run.ladders[0].slots, alphas):
        assert s.degree == a.denominator
    for a, b in zip(alphas, alphas[1:]):
        assert b.denominator % a.denominator == 0


def test_tiny_run_eps_monotone_and_records(tiny):
    run, out, _ = tiny
    eps = run.manifest["stages"][0]["eps"]
    assert all(a >= b for a, b in zip(eps, eps[1:]))
    for l in range(9):
        rec = json.loads((out / f"stage_0/slot_{l}.json").read_text())
        assert rec["l"] == l and rec["schema_version"] == 1
        assert float(rec["commutation_defect"]) <= 1e-10
        assert rec["closeness"]["budget"] == pytest.approx(eps[0] / 2 ** (l + 2))


def test_tiny_run_conjugate_periodicity(tiny):
    run, out, _ = tiny
    cert = json.loads((out / "stage_0/certification.json").read_text())
    assert cert["periodicity_defect"] <= 1e-8
    assert cert["fidelity"]["max_defect"] <= 1e-10
    # and directly through the reloaded chain
    F = run.chain
    q = F.alpha.denominator
    x = np.array([1, 1j]) / np.sqrt(2)
    orbit = orbit_points(F, x, q, run.config.precision_bits)
    assert np.max(np.abs(orbit[-1] - x)) <= 1e-8


def test_tiny_run_records_bit_identical_on_rerun(tiny, tiny_run_repeat):
    _, out, _ = tiny
    out2, _ = tiny_run_repeat
    for l in range(9):
        name = f"stage_0/slot_{l}.json"
        assert (out / name).read_bytes() == (out2 / name).read_bytes()


def test_huge_eps_passes_closeness_and_still_tests_distribution():
    text = TINY_CONFIG.replace("eps = 0.5", "eps = 10").replace("delta = 1.05", "delta = 0.01")
    cfg = parse_config(text + "eps0_policy = paper\n")
    res = run_inner_induction(Fraction(1, 2), cfg)
    for rec in res.records:
        assert rec.closeness["passed"] and not rec.closeness["overflow"]
        # the distribution search still ran and its reports are recorded
        assert rec.search and rec.distribution
        assert all(d["pass"] for d in rec.distribution)
    assert res.final["points"]
