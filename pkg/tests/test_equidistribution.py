import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from akc.equidistribution import (OrbitSample, cap_measure, compare_clouds, lebesgue_reference,
                                  test_CUD, test_transversal, test_UD_along, torus_cloud,
                                  to_real_coords)
from akc.sphere import circle_action, lebesgue_sample
from akc.translations import Axis

Y = np.array([1, 1], dtype=complex) / np.sqrt(2)


def fiber_orbit(z, q, p=1):
    return circle_action(np.arange(q) * p / q, np.broadcast_to(z, (q, len(z))))


# ---------------------------------------------------------------- CUD

def test_cud_single_point_fails():
    rep = test_CUD(OrbitSample(lebesgue_sample(1, 0)), 2.0, 0.1, nballs=50)
    assert not rep.passed


def test_cud_uniform_cloud_passes():
    rep = test_CUD(OrbitSample(lebesgue_sample(100_000, 123)), 2.0, 0.3, nballs=200)
    assert rep.passed, rep.worst
    assert not rep.inconclusive


def test_cud_fiber_orbit_fails():
    orbit = fiber_orbit(lebesgue_sample(1, 4)[0], 1000)
    rep = test_CUD(OrbitSample(orbit), 2.0, 0.1, nballs=200)
    assert not rep.passed
    assert rep.counts["failed_balls"] > 100


def test_cud_rejects_bad_parameters():
    o = OrbitSample(lebesgue_sample(10, 0))
    with pytest.raises(ValueError):
        test_CUD(o, 1.0, 0.3)
    with pytest.raises(ValueError):
        test_CUD(o, 2.0, 0.0)


def test_cud_report_round_trips_json_and_csv():
    rep = test_CUD(OrbitSample(lebesgue_sample(5000, 1)), 3.0, 0.5, nballs=10, seed=2)
    doc = json.loads(rep.to_json(with_table=True))
    assert doc["test"] == "CUD" and len(doc["table"]) == 10
    assert rep.to_csv().count("\n") == 11


def test_orbit_sample_rejects_off_sphere_and_empty():
    with pytest.raises(ValueError):
        OrbitSample(np.array([[1.0, 1.0]], dtype=complex))
    with pytest.raises(ValueError):
        OrbitSample(np.zeros((0, 2), dtype=complex))


# ---------------------------------------------------------------- reference volumes

@pytest.mark.parametrize("r", [0.1, 0.3, 0.6, 1.0, 1.5])
def test_reference_cloud_matches_exact_cap_volume(r):
    tree = lebesgue_reference(2)
    centers = to_real_coords(lebesgue_sample(20, 7))
    frac = tree.query_ball_point(centers, r, return_length=True) / tree.n
    lam = float(cap_measure(2, r))
    se = np.sqrt(lam * (1 - lam) / tree.n)
    assert abs(frac.mean() - lam) < 6 * se + 1e-9


def test_cap_measure_closed_form_s3():
    # on S^3 the normalized cap of angular radius theta is (theta - sin theta cos theta) / pi
    for r in (0.2, 0.7, 1.2, 1.9):
        theta = 2 * np.arcsin(r / 2)
        assert abs(cap_measure(2, r) - (theta - np.sin(theta) * np.cos(theta)) / np.pi) < 1e-12
    assert cap_measure(2, 0.0) == 0.0 and abs(cap_measure(2, 2.0) - 1.0) < 1e-12


# ---------------------------------------------------------------- UD along

def test_ud_self_comparison_passes():
    dirs = [Axis("xi", 1)]
    fresh = torus_cloud(Y, dirs, 20_000, seed=99)
    rep = test_UD_along(OrbitSample(fresh), Y, dirs, 0.1, nballs=200, seed=0,
                        reference_size=100_000)
    assert rep.passed, rep.worst


def test_ud_fiber_only_orbit_fails():
    # reference: the 2-torus {phi^t xi_1^s y}; orbit: the circle {phi^t y}
    dirs = [Axis("xi", 1)]
    rep = test_UD_along(OrbitSample(fiber_orbit(Y, 20_000)), Y, dirs, 0.1, nballs=200, seed=0)
    assert not rep.passed
    assert rep.counts["failed_balls"] > 10


def test_ud_symmetric_under_exchange():
    dirs = [Axis("xi", 2), Axis("tau", 2)]
    a = torus_cloud(Y, dirs, 20_000, 1)
    b = torus_cloud(Y, dirs, 20_000, 2)
    ab = compare_clouds(a, b, 0.1, 0.5, 100, seed=3)
    ba = compare_clouds(b, a, 0.1, 0.5, 100, seed=3)
    assert ab["passed"] and ba["passed"]
    bad = fiber_orbit(Y, 20_000)
    assert not compare_clouds(bad, b, 0.1, 0.5, 100, seed=3)["passed"]
    assert not compare_clouds(b, bad, 0.1, 0.5, 100, seed=3)["passed"]


def test_ud_report_deterministic():
    dirs = [Axis("xi", 1)]
    o = OrbitSample(torus_cloud(Y, dirs, 5000, 5))
    r1 = test_UD_along(o, Y, dirs, 0.2, nballs=40, seed=8, reference_size=20_000)
    r2 = test_UD_along(o, Y, dirs, 0.2, nballs=40, seed=8, reference_size=20_000)
    assert r1.to_json(with_table=True) == r2.to_json(with_table=True)


def test_ud_default_radius_and_validation():
    dirs = [Axis("xi", 1)]
    o = OrbitSample(torus_cloud(Y, dirs, 1000, 5))
    rep = test_UD_along(o, Y, dirs, 0.1, nballs=10, reference_size=5000)
    assert abs(rep.params["radius"] - 2 * np.pi * 0.1) < 1e-15
    assert test_UD_along(o, Y, dirs, 0.5, nballs=10, reference_size=5000).params["radius"] == 1.0
    with pytest.raises(ValueError):
        test_UD_along(o, Y, dirs, 0.0)


def test_torus_cloud_lies_on_parameter_torus():
    # xi_1 and phi only rotate phases: moduli stay those of y
    cloud = torus_cloud(Y, [Axis("xi", 1)], 1000, 0)
    np.testing.assert_allclose(np.abs(cloud), np.abs(Y)[None].repeat(1000, 0), atol=1e-14)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2 ** 31))
def test_ud_reports_deterministic_property(seed):
    dirs = [Axis("tau", 2)]
    o = OrbitSample(torus_cloud(Y, dirs, 500, seed))
    a = test_UD_along(o, Y, dirs, 0.3, nballs=10, seed=seed, reference_size=2000)
    b = test_UD_along(o, Y, dirs, 0.3, nballs=10, seed=seed, reference_size=2000)
    assert a.to_dict(True) == b.to_dict(True)


# ---------------------------------------------------------------- transversality

def test_transversal_passes_when_first_coordinate_large():
    z = np.array([1, 0], dtype=complex)
    rep = test_transversal(z, (1, 2), [Axis("xi", 2)], nu=0.01, C=10.0)
    assert rep.passed


def test_transversal_degenerate_point_fails():
    z = np.array([0, 1], dtype=complex)
    rep = test_transversal(z, 1, [Axis("xi", 2)], nu=0.01, C=10.0)
    assert not rep.passed
    zero_row = [r for r in rep.table if r["lam"] == 0][0]
    assert zero_row["measure"] > 0.99


def test_transversal_measure_scales_with_nu():
    # |xi_2^t z - z_1| < nu for z = (1, 1)/sqrt 2 has measure ~ nu sqrt 2 / pi for small nu
    dirs = [Axis("xi", 2)]
    m1 = test_transversal(Y, (1, 2), dirs, nu=0.02, nsamples=400_000, seed=1).worst["measure"]
    m2 = test_transversal(Y, (1, 2), dirs, nu=0.01, nsamples=400_000, seed=1).worst["measure"]
    assert 1.7 < m1 / m2 < 2.3
    assert abs(m1 - 0.02 * np.sqrt(2) / np.pi) < 0.002


def test_transversal_rejects_nonpositive_nu():
    with pytest.raises(ValueError):
        test_transversal(Y, 1, [Axis("xi", 2)], nu=0.0)
