"""Analytic correlation model: closed forms, smearing, ratio optimum.

Reference numbers were computed once with an independent quadrature
oracle (trapezoidal convolution integral on a 4e6-point grid) and
frozen here; closed-form evaluations must reproduce them.
"""

import math

import numpy as np
import pytest

from homlab.errors import (
    GridError,
    InvalidParamsError,
    NoInteriorMaximumError,
)
from homlab.model import (
    EmitterModel,
    ModelCurve,
    TpiParams,
    coherence_decay,
    coherence_to_bandwidth,
    convolve_irf,
    convolved_exp_decay,
    convolved_exp_decay_partials,
    g2_qd,
    g2_tpi,
    g2_tpi_convolved,
    ideal_max_visibility,
    optimal_ratio,
    sigma_from_jitter,
    symmetric_grid,
    visibility_at_zero,
    visibility_curve,
)

SIGMA_FWHM_1019 = 43.27294572467457


def test_sigma_from_jitter_conventions():
    assert sigma_from_jitter(101.9, "fwhm") == pytest.approx(
        SIGMA_FWHM_1019, abs=1e-12
    )
    assert sigma_from_jitter(101.9, "sigma") == 101.9
    assert sigma_from_jitter(0.0) == 0.0
    # fwhm/sigma ratio is 2 sqrt(2 ln 2)
    ratio = sigma_from_jitter(1.0, "sigma") / sigma_from_jitter(1.0, "fwhm")
    assert ratio == pytest.approx(2.0 * math.sqrt(2.0 * math.log(2.0)), rel=1e-15)


def test_sigma_from_jitter_rejects_bad_input():
    with pytest.raises(InvalidParamsError):
        sigma_from_jitter(-1.0)
    with pytest.raises(InvalidParamsError):
        sigma_from_jitter(10.0, "hwhm")


def test_emitter_and_params_validation():
    with pytest.raises(InvalidParamsError):
        EmitterModel(g0=-0.1, tau_r=500.0)
    with pytest.raises(InvalidParamsError):
        EmitterModel(g0=1.5, tau_r=500.0)
    with pytest.raises(InvalidParamsError):
        EmitterModel(g0=0.2, tau_r=0.0)
    em = EmitterModel(g0=0.21, tau_r=500.0)
    with pytest.raises(InvalidParamsError):
        TpiParams(eta=-1.0, alpha2=0.6, beta=0.0, tau_c=150.0, emitter=em)
    with pytest.raises(InvalidParamsError):
        TpiParams(eta=1.0, alpha2=0.6, beta=0.0, tau_c=-5.0, emitter=em)
    with pytest.raises(InvalidParamsError):
        TpiParams(
            eta=1.0, alpha2=0.6, beta=0.0, tau_c=150.0, emitter=em, sigma_j=-2.0
        )
    with pytest.raises(InvalidParamsError):
        TpiParams(
            eta=1.0, alpha2=0.6, beta=0.0, tau_c=150.0, emitter=em, phi=2.0
        )
    with pytest.raises(InvalidParamsError):
        # all three intensities zero
        TpiParams(eta=0.0, alpha2=0.0, beta=0.0, tau_c=150.0, emitter=em)


def test_symmetric_grid_shape():
    g = symmetric_grid(600.0, 48.0)
    assert g[0] == -g[-1]
    assert np.all(np.diff(g) > 0)
    assert 0.0 in g
    assert g[-1] >= 600.0
    with pytest.raises(InvalidParamsError):
        symmetric_grid(-1.0, 48.0)
    with pytest.raises(InvalidParamsError):
        symmetric_grid(100.0, 0.0)


def test_model_curve_validation():
    with pytest.raises(InvalidParamsError):
        ModelCurve(np.array([0.0, 1.0, 0.5]), np.zeros(3))
    with pytest.raises(InvalidParamsError):
        ModelCurve(np.array([-1.0, 0.0, 2.0]), np.zeros(3))
    with pytest.raises(InvalidParamsError):
        ModelCurve(np.array([-1.0, 0.0, 1.0]), np.array([0.0, np.inf, 0.0]))
    c = ModelCurve(np.array([-2.0, 0.0, 2.0]), np.ones(3))
    assert c.spacing == 2.0


def test_g2_qd_shape():
    em = EmitterModel(g0=0.21, tau_r=500.0)
    assert g2_qd(0.0, em) == pytest.approx(0.21, abs=1e-15)
    assert g2_qd(1e6, em) == pytest.approx(1.0, abs=1e-12)
    t = np.array([-800.0, -30.0, 30.0, 800.0])
    v = g2_qd(t, em)
    assert np.array_equal(v[:2], v[2:][::-1])
    # value at one lifetime, plain arithmetic
    assert g2_qd(500.0, em) == pytest.approx(1.0 - 0.79 * math.exp(-1.0), rel=1e-14)


def test_g2_tpi_zero_delay_arithmetic():
    em = EmitterModel(g0=0.21, tau_r=500.0)
    p = TpiParams(eta=1.0, alpha2=0.63, beta=0.02, tau_c=150.0, emitter=em)
    s = 1.0 + 0.63 + 0.02
    expect = 1.0 + (1.0 * (0.21 - 1.0) + 2.0 * 1.0 * 0.63) / s**2
    assert g2_tpi(0.0, p) == pytest.approx(expect, rel=1e-14)
    # crossed polarization keeps only the emitter dip
    pq = TpiParams(
        eta=1.0,
        alpha2=0.63,
        beta=0.02,
        tau_c=150.0,
        emitter=em,
        phi=math.pi / 2,
    )
    expect_perp = 1.0 + (0.21 - 1.0) / s**2
    assert g2_tpi(0.0, pq) == pytest.approx(expect_perp, rel=1e-12)
    assert g2_tpi(5e5, p) == pytest.approx(1.0, abs=1e-12)


def test_g2_tpi_poisson_limits():
    em = EmitterModel(g0=0.21, tau_r=500.0)
    laser_only = TpiParams(eta=0.0, alpha2=0.8, beta=0.1, tau_c=150.0, emitter=em)
    t = np.linspace(-3000.0, 3000.0, 301)
    assert np.all(g2_tpi(t, laser_only) == 1.0)
    flat_emitter = TpiParams(
        eta=1.0,
        alpha2=0.0,
        beta=0.0,
        tau_c=150.0,
        emitter=EmitterModel(g0=1.0, tau_r=500.0),
    )
    assert np.all(g2_tpi(t, flat_emitter) == 1.0)


class TestConvolvedExpDecay:
    """Closed-form two-sided exponential x Gaussian."""

    def test_reduces_to_plain_decay_without_jitter(self):
        t = np.array([-900.0, -10.0, 0.0, 10.0, 900.0])
        v = convolved_exp_decay(t, 150.0, 0.0)
        assert v == pytest.approx(np.exp(-np.abs(t) / 150.0), rel=1e-15)

    def test_frozen_quadrature_values(self):
        s = SIGMA_FWHM_1019
        assert convolved_exp_decay(0.0, 150.0, s) == pytest.approx(
            0.8058182732170595, abs=1e-12
        )
        assert convolved_exp_decay(100.0, 150.0, s) == pytest.approx(
            0.5331704570053138, abs=1e-12
        )
        assert convolved_exp_decay(-275.0, 150.0, s) == pytest.approx(
            0.16667305176862993, abs=1e-12
        )
        assert convolved_exp_decay(0.0, 500.0, s) == pytest.approx(
            0.9345258198561534, abs=1e-12
        )

    def test_even_and_bounded(self):
        t = np.linspace(-4000.0, 4000.0, 1601)
        v = convolved_exp_decay(t, 150.0, 60.0)
        assert np.array_equal(v, v[::-1])
        assert np.all(v > 0.0)
        assert np.all(v <= 1.0)
        # smearing lowers the peak and lifts the wings
        plain = np.exp(-np.abs(t) / 150.0)
        assert v[800] < plain[800]
        assert v[900] > plain[900]

    def test_no_overflow_at_huge_delay(self):
        v = convolved_exp_decay(np.array([-1e9, 1e9]), 150.0, 43.0)
        assert np.all(np.isfinite(v))
        assert np.all(v >= 0.0)
        assert np.all(v < 1e-300)

    def test_partials_match_finite_differences(self):
        t = np.array([-600.0, -90.0, 0.0, 35.0, 200.0, 1500.0])
        for T, s in ((150.0, 43.27), (500.0, 25.0), (90.0, 70.0)):
            val, d_dT, d_ds = convolved_exp_decay_partials(t, T, s)
            assert val == pytest.approx(convolved_exp_decay(t, T, s), rel=1e-14)
            hT = T * 1e-6
            num_T = (
                convolved_exp_decay(t, T + hT, s)
                - convolved_exp_decay(t, T - hT, s)
            ) / (2 * hT)
            hs = s * 1e-6
            num_s = (
                convolved_exp_decay(t, T, s + hs)
                - convolved_exp_decay(t, T, s - hs)
            ) / (2 * hs)
            np.testing.assert_allclose(d_dT, num_T, rtol=2e-6, atol=1e-12)
            np.testing.assert_allclose(d_ds, num_s, rtol=2e-6, atol=1e-12)

    def test_rejects_nonpositive_decay(self):
        with pytest.raises(InvalidParamsError):
            convolved_exp_decay(0.0, 0.0, 10.0)
        with pytest.raises(InvalidParamsError):
            convolved_exp_decay(0.0, 150.0, -1.0)


def test_g2_tpi_convolved_frozen_values(paper_params, paper_scenario):
    assert g2_tpi_convolved(0.0, paper_params) == pytest.approx(
        1.1017651520907745, abs=1e-12
    )
    perp = paper_scenario.tpi_params(phi=math.pi / 2)
    assert g2_tpi_convolved(0.0, perp) == pytest.approx(
        0.7288244636597387, abs=1e-12
    )


def test_g2_tpi_convolved_matches_unsmeared_when_sigma_zero():
    em = EmitterModel(g0=0.3, tau_r=400.0)
    p = TpiParams(eta=1.0, alpha2=0.5, beta=0.05, tau_c=120.0, emitter=em)
    t = np.linspace(-2000.0, 2000.0, 401)
    np.testing.assert_allclose(g2_tpi_convolved(t, p), g2_tpi(t, p), rtol=1e-14)


def test_visibility_curve_zero_delay(paper_params):
    grid = symmetric_grid(3000.0, 10.0)
    curve = visibility_curve(paper_params, grid)
    center = int(np.argmin(np.abs(curve.tau_grid)))
    assert curve.values[center] == pytest.approx(0.5117016607240945, abs=1e-12)
    assert np.all(curve.values >= 0.0)
    assert curve.values[0] == pytest.approx(0.0, abs=1e-6)


def test_visibility_curve_rejects_vanishing_crossed_curve():
    p = TpiParams(
        eta=1.0,
        alpha2=0.0,
        beta=0.0,
        tau_c=100.0,
        emitter=EmitterModel(g0=0.0, tau_r=300.0),
    )
    with pytest.raises(InvalidParamsError):
        visibility_curve(p, symmetric_grid(1000.0, 10.0))


def test_visibility_at_zero_matches_curve(paper_params):
    v0 = visibility_at_zero(
        r=0.63,
        emitter=paper_params.emitter,
        tau_c=150.0,
        sigma_j=paper_params.sigma_j,
        beta_over_eta=0.02,
    )
    assert v0 == pytest.approx(0.5117016607240945, abs=1e-12)


def test_ideal_max_visibility():
    assert ideal_max_visibility(0.0) == 1.0
    assert ideal_max_visibility(2.0) == 0.5
    assert ideal_max_visibility(0.63) == pytest.approx(
        0.7604562737642586, abs=1e-15
    )
    rs = np.linspace(0.0, 3.0, 50)
    vals = [ideal_max_visibility(r) for r in rs]
    assert np.all(np.diff(vals) < 0)
    with pytest.raises(InvalidParamsError):
        ideal_max_visibility(-0.1)


def test_coherence_decay_and_bandwidth():
    d = np.array([-300.0, 0.0, 150.0])
    np.testing.assert_allclose(
        coherence_decay(d, 150.0), np.exp(-np.abs(d) / 150.0), rtol=1e-15
    )
    assert coherence_to_bandwidth(150.0) == pytest.approx(
        4.388079712666666, abs=1e-12
    )
    assert coherence_to_bandwidth(1.0) == pytest.approx(658.2119569, abs=1e-9)
    with pytest.raises(InvalidParamsError):
        coherence_to_bandwidth(0.0)
    with pytest.raises(InvalidParamsError):
        coherence_decay(100.0, -4.0)


class TestConvolveIrf:
    def test_zero_sigma_is_identity(self):
        grid = symmetric_grid(500.0, 5.0)
        c = ModelCurve(grid, np.exp(-np.abs(grid) / 150.0))
        out = convolve_irf(c, 0.0)
        np.testing.assert_array_equal(out.values, c.values)

    def test_preserves_constant(self):
        grid = symmetric_grid(800.0, 4.0)
        c = ModelCurve(grid, np.full(grid.size, 2.5))
        out = convolve_irf(c, 30.0)
        np.testing.assert_allclose(out.values, 2.5, rtol=1e-12)

    def test_agrees_with_closed_form_midrange(self):
        grid = symmetric_grid(2100.0, 0.5)
        c = ModelCurve(grid, np.exp(-np.abs(grid) / 150.0))
        out = convolve_irf(c, 40.0)
        ref = convolved_exp_decay(grid, 150.0, 40.0)
        mid = np.abs(grid) <= 1200.0
        np.testing.assert_allclose(out.values[mid], ref[mid], atol=2e-5)

    def test_rejects_coarse_grid(self):
        grid = symmetric_grid(900.0, 20.0)
        c = ModelCurve(grid, np.exp(-np.abs(grid) / 150.0))
        with pytest.raises(GridError):
            convolve_irf(c, 30.0)

    def test_rejects_short_grid(self):
        # the curve still varies near the edges of this window
        grid = symmetric_grid(300.0, 2.0)
        c = ModelCurve(grid, np.exp(-np.abs(grid) / 400.0))
        with pytest.raises(GridError):
            convolve_irf(c, 30.0)

    def test_rejects_nonuniform_grid(self):
        grid = np.array([-10.0, -4.0, 0.0, 4.0, 10.0])
        c = ModelCurve(grid, np.ones(5))
        with pytest.raises(GridError):
            convolve_irf(c, 8.0)


class TestOptimalRatio:
    def test_frozen_value_fwhm_convention(self, paper_params):
        r = optimal_ratio(paper_params)
        assert r == pytest.approx(0.5496581573763015, abs=1e-6)

    def test_frozen_value_sigma_convention(self):
        em = EmitterModel(g0=0.21, tau_r=500.0)
        p = TpiParams(
            eta=1.0, alpha2=0.63, beta=0.02, tau_c=150.0, emitter=em,
            sigma_j=101.9,
        )
        r = optimal_ratio(p)
        assert r == pytest.approx(0.6033917288960721, abs=1e-6)

    def test_tolerance_doubling_moves_little(self, paper_params):
        r1 = optimal_ratio(paper_params, xatol=1e-4)
        r2 = optimal_ratio(paper_params, xatol=2e-4)
        assert abs(r1 - r2) <= 2e-4

    def test_monotone_case_has_no_interior_maximum(self):
        p = TpiParams(
            eta=1.0,
            alpha2=0.5,
            beta=0.0,
            tau_c=150.0,
            emitter=EmitterModel(g0=0.0, tau_r=500.0),
        )
        with pytest.raises(NoInteriorMaximumError):
            optimal_ratio(p)

    def test_bounds_validation(self, paper_params):
        with pytest.raises(InvalidParamsError):
            optimal_ratio(paper_params, r_bounds=(0.5, 0.1))
        with pytest.raises(InvalidParamsError):
            optimal_ratio(paper_params, r_bounds=(0.0, 1.0))

    def test_explicit_background_ratio(self, paper_params):
        # passing beta/eta explicitly must match the in-params route
        r1 = optimal_ratio(paper_params)
        r2 = optimal_ratio(paper_params, beta_over_eta=0.02)
        assert abs(r1 - r2) < 1e-9
