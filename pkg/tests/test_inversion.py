import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvnmr.core import F19, H1, InputError, NumericalError
from nvnmr.dipolar import HALF_SPACE, layer_brms2, surface2d_brms2
from nvnmr.inversion import (
    TABLE_DELTAS,
    density2d_from_brms,
    depth_error_curve,
    depth_from_brms,
    depth_sigma,
    molecule_count,
    propagate_uncertainty,
    surface_report,
    thickness_sensitivity,
)

NM = 1e-9
RHO = 60e27
DELTAS = [0.25 * NM, 0.5 * NM, 1 * NM, 2 * NM, HALF_SPACE]


@settings(max_examples=200, deadline=None)
@given(d=st.floats(1.0, 30.0), k=st.integers(0, 4), rho=st.floats(1.0, 200.0))
def test_depth_round_trip(d, k, rho):
    delta = DELTAS[k]
    b = math.sqrt(layer_brms2(d * NM, delta, rho * 1e27))
    est = depth_from_brms(b, delta, rho * 1e27)
    assert est.depth == pytest.approx(d * NM, rel=1e-9)


@settings(max_examples=200, deadline=None)
@given(d=st.floats(1.0, 30.0), rho=st.floats(0.01, 100.0))
def test_density_round_trip(d, rho):
    b = math.sqrt(surface2d_brms2(d * NM, rho * 1e18, F19))
    assert density2d_from_brms(b, d * NM, F19) == pytest.approx(rho * 1e18, rel=1e-13)


def test_known_depths():
    assert depth_from_brms(331e-9, 1 * NM).depth / NM == pytest.approx(6.3319, abs=1e-3)
    assert depth_from_brms(331e-9, HALF_SPACE).depth / NM == pytest.approx(8.935, abs=1e-3)


def test_bracket_expansion_far_outside_default():
    # very weak and very strong fields need depths beyond [0.1, 100] nm
    for d in (0.02 * NM, 400 * NM):
        b = math.sqrt(layer_brms2(d, HALF_SPACE, RHO))
        assert depth_from_brms(b, HALF_SPACE).depth == pytest.approx(d, rel=1e-9)


@pytest.mark.parametrize("brms, msg", [(0.0, "infinite depth"), (-1e-9, "positive"), (float("nan"), "positive")])
def test_depth_rejects(brms, msg):
    with pytest.raises(InputError, match=msg):
        depth_from_brms(brms)


@pytest.mark.parametrize("brms", [1e-310, 1e200])
def test_unrepresentable_field_is_numerical_failure(brms):
    with pytest.raises(NumericalError):
        depth_from_brms(brms, HALF_SPACE)


def test_depth_rejects_bad_density():
    with pytest.raises(InputError):
        depth_from_brms(300e-9, rho3d=0.0)


def test_depth_increases_with_delta_and_decreases_with_brms():
    depths = [depth_from_brms(331e-9, dl).depth for dl in DELTAS]
    assert all(a < b for a, b in zip(depths, depths[1:]))
    assert depth_from_brms(400e-9).depth < depth_from_brms(300e-9).depth


def test_density_increases_with_depth():
    rhos = [density2d_from_brms(163e-9, d * NM) for d in (4, 5, 6, 7)]
    assert all(a < b for a, b in zip(rhos, rhos[1:]))
    assert rhos[2] / rhos[0] == pytest.approx((6 / 4) ** 4)


def test_depth_sigma_matches_finite_difference():
    b, sb = 331e-9, 12e-9
    for delta in DELTAS:
        est = depth_from_brms(b, delta, brms_sigma=sb)
        h = 1e-4 * b
        deriv = (depth_from_brms(b + h, delta).depth - depth_from_brms(b - h, delta).depth) / (2 * h)
        assert est.uncertainty == pytest.approx(abs(deriv) * sb, rel=1e-5)
        assert depth_sigma(est.depth, delta, b, 2 * sb) == pytest.approx(2 * est.uncertainty, rel=1e-12)


def test_density_sigma_relative_is_twice_field_relative():
    # at fixed depth (no proton uncertainty) sigma_rho/rho = 2 sigma_B/B
    sig = propagate_uncertainty(6.3 * NM, 1 * NM, 331e-9, 0.0, 163e-9, 7e-9, atoms_per_molecule=3)
    rho = density2d_from_brms(163e-9, 6.3 * NM)
    assert sig["depth"] == 0.0
    assert sig["rho2d"] / rho == pytest.approx(2 * 7 / 163, rel=1e-12)


def test_propagated_sigmas_match_finite_difference():
    bh, sh, bf, sf = 331e-9, 12e-9, 163e-9, 7e-9

    def chain(bh_, bf_):
        d = depth_from_brms(bh_, 1 * NM).depth
        rho = density2d_from_brms(bf_, d)
        return rho, molecule_count(rho, 3, d)

    d = depth_from_brms(bh, 1 * NM).depth
    sig = propagate_uncertainty(d, 1 * NM, bh, sh, bf, sf, atoms_per_molecule=3)
    eps = 1e-5
    grads = []
    for dbh, dbf in ((bh * eps, 0), (0, bf * eps)):
        hi, lo = chain(bh + dbh, bf + dbf), chain(bh - dbh, bf - dbf)
        grads.append([(a - b) / (2 * (dbh or dbf)) for a, b in zip(hi, lo)])
    s_rho = math.hypot(grads[0][0] * sh, grads[1][0] * sf)
    s_n = math.hypot(grads[0][1] * sh, grads[1][1] * sf)
    assert sig["rho2d"] == pytest.approx(s_rho, rel=1e-4)
    assert sig["molecule_count"] == pytest.approx(s_n, rel=1e-4)


def test_molecule_count_formula_and_validation():
    assert molecule_count(3.0e18, 3, 6.3 * NM) == pytest.approx(1e18 * 0.735 * (6.3 * NM) ** 2)
    assert molecule_count(0.0, 3, 6.3 * NM) == 0.0
    with pytest.raises(InputError):
        molecule_count(1e18, 0, 6e-9)


def test_density_rejects_negative():
    with pytest.raises(InputError):
        density2d_from_brms(-1e-9, 5e-9)
    with pytest.raises(InputError):
        density2d_from_brms(1e-9, 0.0)


def test_thickness_table_shape_and_ordering():
    rows = thickness_sensitivity(331e-9, brms_f=163e-9)
    assert [r.delta for r in rows] == list(TABLE_DELTAS)
    order = sorted(rows, key=lambda r: r.depth)
    assert [r.delta for r in order] == [0.25 * NM, 0.5 * NM, 1 * NM, 2 * NM, HALF_SPACE]
    for r in rows:
        assert r.rho2d_molecules == pytest.approx(r.rho2d_spins / 3)
    with pytest.raises(InputError):
        thickness_sensitivity(331e-9, delta_grid=[])


def test_depth_round_only_changes_density_step():
    full = thickness_sensitivity(331e-9, brms_f=163e-9)
    rounded = thickness_sensitivity(331e-9, brms_f=163e-9, depth_round=0.1 * NM)
    for a, b in zip(full, rounded):
        assert a.depth == b.depth
        d_used = round(a.depth / (0.1 * NM)) * 0.1 * NM
        assert b.rho2d_spins == pytest.approx(density2d_from_brms(163e-9, d_used), rel=1e-12)


def test_error_curve_zero_at_truth_and_monotone():
    grid = [0.25 * NM, 0.5 * NM, 1 * NM, 1.5 * NM, 2 * NM, 4 * NM, HALF_SPACE]
    for d in (3, 5, 8):
        curve = depth_error_curve(d * NM, 1 * NM, grid)
        errs = [e for _, e in curve]
        assert errs[2] == 0.0
        assert all(a < b for a, b in zip(errs, errs[1:]))
        assert errs[0] < 0 < errs[-1]


def test_error_curve_near_truth_is_continuous():
    (_, e), = depth_error_curve(5 * NM, 1 * NM, [1.0000001 * NM])
    assert 0 < e < 1e-6


def test_surface_report_averages_proton_measurements():
    rep = surface_report("NV", [320e-9, 331e-9, 342e-9], 163e-9, depth_round=None)
    single = surface_report("NV", 331e-9, 163e-9, depth_round=None)
    assert rep.depth.depth == pytest.approx(single.depth.depth, rel=1e-12)


def test_surface_report_with_known_depth_and_zero_fluorine():
    rep = surface_report("NV 4", None, 102e-9, depth=6.4 * NM)
    assert rep.reported_depth == 6.4 * NM
    assert rep.thickness_table == []
    zero = surface_report("NV", 331e-9, 0.0)
    assert zero.rho2d_spins == 0.0 and zero.molecule_count == 0.0 and zero.molecules_display == 0


def test_surface_report_errors():
    with pytest.raises(InputError):
        surface_report("NV", None, 100e-9)
    with pytest.raises(InputError):
        surface_report("NV", [], 100e-9)
    with pytest.raises(InputError):
        surface_report("NV", 331e-9, -1e-9)
    with pytest.raises(InputError):
        surface_report("NV", None, 100e-9, depth=0.0)
