"""Histogram normalization, visibility extraction and model fitting.

The pipeline is: raw coincidence histogram -> tail-normalized g2 curve
with Poissonian errors -> per-bin visibility between co- and
cross-polarized curves -> weighted least-squares fits (exponential
coherence decay; full two-source correlation model) through the local
Levenberg-Marquardt engine in ``fitting``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from homlab import fitting
from homlab.errors import InvalidParamsError
from homlab.model import (
    TpiParams,
    convolved_exp_decay_partials,
    ideal_max_visibility,
)
from homlab.simulate import CorrelationHistogram

# Parameters of the correlation model that a fit may free, in canonical
# order; phi_perp is the polarization angle of the crossed curve only.
FITTABLE_PARAMS = (
    "eta",
    "alpha2",
    "beta",
    "g0",
    "tau_r",
    "tau_c",
    "sigma_j",
    "phi_perp",
)

DEFAULT_FREE = ("alpha2", "g0", "tau_r", "sigma_j")


@dataclass
class NormalizedG2:
    """Unitless correlation curve with per-bin Poissonian errors."""

    tau_centers: np.ndarray
    values: np.ndarray
    sigma: np.ndarray
    normalization_constant: float

    def __post_init__(self):
        self.tau_centers = np.asarray(self.tau_centers, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if not (
            self.tau_centers.shape == self.values.shape == self.sigma.shape
        ) or self.tau_centers.ndim != 1:
            raise InvalidParamsError("curve arrays must be equal-length 1-D")
        if np.any(self.sigma <= 0):
            raise InvalidParamsError("sigma must be > 0 everywhere")
        if not (
            np.all(np.isfinite(self.values)) and np.all(np.isfinite(self.sigma))
        ):
            raise InvalidParamsError("curve values and sigma must be finite")


@dataclass
class VisibilityCurve:
    """Per-bin interference visibility with propagated errors.

    Bins where the crossed-polarized curve is zero are excluded from the
    arrays and reported in ``excluded_tau_ps``.
    """

    tau_centers: np.ndarray
    v: np.ndarray
    sigma_v: np.ndarray
    n_excluded: int = 0
    excluded_tau_ps: list = field(default_factory=list)

    def __post_init__(self):
        self.tau_centers = np.asarray(self.tau_centers, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.sigma_v = np.asarray(self.sigma_v, dtype=float)


@dataclass
class FitResult:
    """Fitted parameters with uncertainties and goodness of fit.

    ``params`` holds every model parameter (frozen ones echo their input
    value with std_error 0); ``covariance`` is over ``free_params`` in
    order.  ``settings`` echoes the fit configuration for the report.
    """

    params: dict
    std_errors: dict
    covariance: np.ndarray
    free_params: list
    chi2: float
    dof: int
    converged: bool
    n_iterations: int
    settings: dict

    def __post_init__(self):
        self.covariance = np.asarray(self.covariance, dtype=float)
        if self.dof < 0:
            raise InvalidParamsError("dof must be >= 0")


def normalize_histogram(
    h: CorrelationHistogram, tail_window_ps: float | None = None
) -> NormalizedG2:
    """Divide counts by the mean count over the two outermost tail windows.

    The tail window defaults to 20% of the half-range on each side and
    must contain at least 20 bins per side; it should sit beyond the
    correlation structure so the tail mean estimates the uncorrelated
    level.  Per-bin errors are Poissonian, sqrt(counts)/mean, with empty
    bins assigned the error of a single count so weights stay finite.
    """
    half_range = -h.tau_min_ps
    if tail_window_ps is None:
        tail_window_ps = 0.2 * half_range
    if not 0 < tail_window_ps <= half_range:
        raise InvalidParamsError(
            f"tail_window_ps must be in (0, {half_range:g}] "
            f"(got {tail_window_ps})"
        )
    centers = h.tau_centers()
    tail = np.abs(centers) > half_range - tail_window_ps
    per_side = int(np.count_nonzero(tail & (centers < 0)))
    if per_side < 20 or int(np.count_nonzero(tail & (centers > 0))) < 20:
        raise InvalidParamsError(
            f"tail window spans only {per_side} bins per side; need >= 20 "
            "for a stable normalization"
        )
    tail_mean = float(h.counts[tail].mean())
    if tail_mean <= 0:
        raise InvalidParamsError(
            "tail bins are all empty; cannot normalize (acquire more data "
            "or widen the window)"
        )
    counts = h.counts.astype(float)
    return NormalizedG2(
        tau_centers=centers,
        values=counts / tail_mean,
        sigma=np.sqrt(np.maximum(counts, 1.0)) / tail_mean,
        normalization_constant=tail_mean,
    )


def visibility_from_histograms(
    g_par: NormalizedG2, g_perp: NormalizedG2
) -> VisibilityCurve:
    """Per-bin visibility (g_par - g_perp)/g_perp with propagated errors.

    sigma_v**2 = (sigma_par/g_perp)**2 + (g_par*sigma_perp/g_perp**2)**2.
    """
    if g_par.tau_centers.shape != g_perp.tau_centers.shape or not np.allclose(
        g_par.tau_centers, g_perp.tau_centers
    ):
        raise InvalidParamsError("curves must share a bin grid")
    ok = g_perp.values != 0.0
    excluded = g_par.tau_centers[~ok]
    yp, sp = g_par.values[ok], g_par.sigma[ok]
    yq, sq = g_perp.values[ok], g_perp.sigma[ok]
    v = (yp - yq) / yq
    sigma_v = np.sqrt((sp / yq) ** 2 + (yp * sq / yq**2) ** 2)
    return VisibilityCurve(
        tau_centers=g_par.tau_centers[ok],
        v=v,
        sigma_v=sigma_v,
        n_excluded=int(excluded.size),
        excluded_tau_ps=[float(t) for t in excluded],
    )


def fraction_of_max(v_meas: float, r: float) -> float:
    """Measured visibility as a fraction of the ideal-case maximum 2/(2+r)."""
    if v_meas < 0:
        raise InvalidParamsError(f"v_meas must be >= 0 (got {v_meas})")
    return v_meas / ideal_max_visibility(r)


def fit_exponential_visibility(
    points, fix_amplitude: bool = False, max_iterations: int = 500
) -> FitResult:
    """Weighted fit of V(delta) = A * exp(-|delta|/tau_c) to visibility
    points given as rows (delay_ps, visibility, sigma).

    ``fix_amplitude`` pins A = 1 and fits tau_c alone.  Exactly
    determined systems (as many points as free parameters) are accepted
    and yield dof = 0.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise InvalidParamsError("points must be rows of (delay, value, sigma)")
    delay = np.abs(pts[:, 0])
    value = pts[:, 1]
    sigma = pts[:, 2]
    n_free = 1 if fix_amplitude else 2
    if pts.shape[0] < n_free:
        raise InvalidParamsError(
            f"need at least {n_free} points (got {pts.shape[0]})"
        )
    if np.any(sigma <= 0):
        raise InvalidParamsError("sigmas must be > 0")
    if np.ptp(delay) == 0.0:
        raise InvalidParamsError(
            "degenerate data: all delays equal, decay time unconstrained"
        )

    pos = value > 0
    if np.count_nonzero(pos) >= 2 and np.ptp(delay[pos]) > 0:
        # Log-linear weighted regression for the starting point.
        w = (value[pos] / sigma[pos]) ** 2
        slope, intercept = np.polyfit(delay[pos], np.log(value[pos]), 1, w=w)
        tau0 = -1.0 / slope if slope < 0 else float(np.max(delay))
        a0 = math.exp(min(intercept, 50.0))
    else:
        tau0 = max(float(np.max(delay)) / 2.0, 1.0)
        a0 = max(float(np.max(value)), 0.5)
    tau0 = min(max(tau0, 1e-3), 1e9)

    if fix_amplitude:
        names = ["tau_c_ps"]
        x0 = np.array([tau0])
        lo, hi = np.array([1e-9]), np.array([1e12])

        def split(x):
            return 1.0, x[0]

    else:
        names = ["amplitude", "tau_c_ps"]
        x0 = np.array([min(max(a0, 1e-6), 1e6), tau0])
        lo, hi = np.array([1e-12, 1e-9]), np.array([1e9, 1e12])

        def split(x):
            return x[0], x[1]

    def residual(x):
        a, tau = split(x)
        return (a * np.exp(-delay / tau) - value) / sigma

    def jacobian(x):
        a, tau = split(x)
        e = np.exp(-delay / tau)
        d_tau = a * e * delay / tau**2 / sigma
        if fix_amplitude:
            return d_tau[:, None]
        return np.column_stack([e / sigma, d_tau])

    lm = fitting.levenberg_marquardt(
        residual,
        x0,
        jacobian=jacobian,
        bounds=(lo, hi),
        max_iterations=max_iterations,
        param_names=names,
    )
    a_fit, tau_fit = split(lm.x)
    err = np.sqrt(np.maximum(np.diag(lm.covariance), 0.0))
    params = {"amplitude": float(a_fit), "tau_c_ps": float(tau_fit)}
    std = (
        {"amplitude": 0.0, "tau_c_ps": float(err[0])}
        if fix_amplitude
        else {"amplitude": float(err[0]), "tau_c_ps": float(err[1])}
    )
    return FitResult(
        params=params,
        std_errors=std,
        covariance=lm.covariance,
        free_params=names,
        chi2=lm.chi2,
        dof=int(pts.shape[0] - n_free),
        converged=lm.converged,
        n_iterations=lm.n_iterations,
        settings={
            "model": "amplitude * exp(-|delay|/tau_c)",
            "fix_amplitude": fix_amplitude,
            "max_iterations": max_iterations,
        },
    )


def _params_to_dict(p: TpiParams) -> dict:
    return {
        "eta": p.eta,
        "alpha2": p.alpha2,
        "beta": p.beta,
        "g0": p.emitter.g0,
        "tau_r": p.emitter.tau_r,
        "tau_c": p.tau_c,
        "sigma_j": p.sigma_j,
        "phi_perp": math.pi / 2,
    }


_BOUNDS = {
    "eta": (0.0, 1e9),
    "alpha2": (0.0, 1e9),
    "beta": (0.0, 1e9),
    "g0": (0.0, 1.0),
    "tau_r": (1e-9, 1e12),
    "tau_c": (1e-9, 1e12),
    "sigma_j": (1e-9, 1e9),
    "phi_perp": (0.0, math.pi / 2),
}

# Three-point Gauss-Legendre rule used to average the model over each
# bin, matching histogrammed data (bin counts sum the curve over the
# bin, they do not sample its center).
_GL3_NODES = np.array([-math.sqrt(3.0 / 5.0), 0.0, math.sqrt(3.0 / 5.0)])
_GL3_WEIGHTS = np.array([5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0])


def _quad_grid(tau_centers: np.ndarray) -> np.ndarray:
    d = np.diff(tau_centers)
    if d.size == 0 or not np.allclose(d, d[0], rtol=1e-9, atol=1e-9):
        raise InvalidParamsError(
            "tau_centers must form a uniform grid (histogram bin centers)"
        )
    b = float(d[0])
    return (tau_centers[:, None] + 0.5 * b * _GL3_NODES[None, :]).ravel()


def _bin_average(flat: np.ndarray) -> np.ndarray:
    return flat.reshape(-1, _GL3_NODES.size) @ _GL3_WEIGHTS


def _curve_model_and_partials(t, th, phi, free, is_perp):
    """Model values and d(model)/d(free param) for one polarization."""
    c = math.cos(phi) ** 2
    s = th["eta"] + th["alpha2"] + th["beta"]
    if s <= 0:
        raise InvalidParamsError("eta + alpha2 + beta must stay > 0")
    h_r, dhr_dtau, dhr_dsig = convolved_exp_decay_partials(
        t, th["tau_r"], th["sigma_j"]
    )
    h_c, dhc_dtau, dhc_dsig = convolved_exp_decay_partials(
        t, th["tau_c"], th["sigma_j"]
    )
    eta, alpha2, g0 = th["eta"], th["alpha2"], th["g0"]
    u = eta**2 * (g0 - 1.0) * h_r + 2.0 * eta * alpha2 * c * h_c
    m = 1.0 + u / s**2
    cols = []
    for name in free:
        if name == "eta":
            d = (2.0 * eta * (g0 - 1.0) * h_r + 2.0 * alpha2 * c * h_c) / s**2 - (
                2.0 * u / s**3
            )
        elif name == "alpha2":
            d = 2.0 * eta * c * h_c / s**2 - 2.0 * u / s**3
        elif name == "beta":
            d = -2.0 * u / s**3
        elif name == "g0":
            d = eta**2 * h_r / s**2
        elif name == "tau_r":
            d = eta**2 * (g0 - 1.0) * dhr_dtau / s**2
        elif name == "tau_c":
            d = 2.0 * eta * alpha2 * c * dhc_dtau / s**2
        elif name == "sigma_j":
            d = (
                eta**2 * (g0 - 1.0) * dhr_dsig
                + 2.0 * eta * alpha2 * c * dhc_dsig
            ) / s**2
        elif name == "phi_perp":
            if is_perp:
                d = -2.0 * eta * alpha2 * h_c * math.sin(2.0 * phi) / s**2
            else:
                d = np.zeros_like(h_c)
        else:
            raise InvalidParamsError(f"unknown fit parameter {name!r}")
        cols.append(d)
    return m, cols


def binned_model_values(
    p: TpiParams, tau_centers: np.ndarray, phi: float | None = None
) -> np.ndarray:
    """Smeared correlation model averaged over each histogram bin.

    This is what fit_g2_model compares against normalized histogram
    values, so data generated with it sit exactly on the fit's manifold.
    ``tau_centers`` must be a uniform grid; ``phi`` defaults to p.phi.
    """
    t = np.asarray(tau_centers, dtype=float)
    th = _params_to_dict(p)
    use_phi = p.phi if phi is None else float(phi)
    m, _ = _curve_model_and_partials(_quad_grid(t), th, use_phi, (), False)
    return _bin_average(m)


def fit_g2_model(
    g_par: NormalizedG2,
    g_perp: NormalizedG2,
    init: TpiParams,
    free=DEFAULT_FREE,
    max_iterations: int = 500,
) -> FitResult:
    """Simultaneous weighted fit of the smeared correlation model to the
    co-polarized (phi = 0) and cross-polarized curves.

    ``free`` names the parameters to vary; the rest stay at their ``init``
    values.  The coherence time is frozen by default (measured
    independently in the intended workflow).  The intensity triple is
    scale-degenerate, so at most two of (eta, alpha2, beta) can be freed
    together with g0; the default frees (alpha2, g0, tau_r, sigma_j).
    ``phi_perp`` frees the crossed curve's polarization angle to model
    imperfect extinction.  Freeing sigma_j requires init.sigma_j > 0.

    The prediction is the model averaged over each bin (the data are
    binned counts, not point samples), so the curves must sit on a
    uniform grid.
    """
    if g_par.tau_centers.shape != g_perp.tau_centers.shape or not np.allclose(
        g_par.tau_centers, g_perp.tau_centers
    ):
        raise InvalidParamsError("curves must share a bin grid")
    free = tuple(free)
    for name in free:
        if name not in FITTABLE_PARAMS:
            raise InvalidParamsError(
                f"unknown fit parameter {name!r}; choose from {FITTABLE_PARAMS}"
            )
    if len(set(free)) != len(free):
        raise InvalidParamsError("free parameter names must be unique")
    if not free:
        raise InvalidParamsError("at least one parameter must be free")
    baseline = _params_to_dict(init)
    if "sigma_j" in free and baseline["sigma_j"] <= 0:
        raise InvalidParamsError(
            "freeing sigma_j requires a positive starting value"
        )

    t = g_par.tau_centers
    tq = _quad_grid(t)
    y = np.concatenate([g_par.values, g_perp.values])
    w = np.concatenate([g_par.sigma, g_perp.sigma])

    def build(x):
        th = dict(baseline)
        for name, val in zip(free, x):
            th[name] = float(val)
        return th

    def residual(x):
        th = build(x)
        m_par, _ = _curve_model_and_partials(tq, th, 0.0, (), False)
        m_perp, _ = _curve_model_and_partials(tq, th, th["phi_perp"], (), True)
        m = np.concatenate([_bin_average(m_par), _bin_average(m_perp)])
        return (m - y) / w

    def jacobian(x):
        th = build(x)
        _, cols_par = _curve_model_and_partials(tq, th, 0.0, free, False)
        _, cols_perp = _curve_model_and_partials(
            tq, th, th["phi_perp"], free, True
        )
        jac = np.empty((y.size, len(free)))
        for j in range(len(free)):
            jac[:, j] = (
                np.concatenate(
                    [_bin_average(cols_par[j]), _bin_average(cols_perp[j])]
                )
                / w
            )
        return jac

    x0 = np.array([baseline[name] for name in free])
    if "phi_perp" in free:
        # d(model)/d(phi_perp) vanishes identically at 0 and pi/2, so a
        # start on either stationary point would present a singular
        # normal matrix before the first step.  Pull it inside.
        j = free.index("phi_perp")
        x0[j] = min(max(x0[j], 0.1), math.pi / 2 - 0.1)
    lo = np.array([_BOUNDS[name][0] for name in free])
    hi = np.array([_BOUNDS[name][1] for name in free])
    lm = fitting.levenberg_marquardt(
        residual,
        x0,
        jacobian=jacobian,
        bounds=(lo, hi),
        max_iterations=max_iterations,
        param_names=list(free),
    )

    fitted = build(lm.x)
    err = np.sqrt(np.maximum(np.diag(lm.covariance), 0.0))
    std = {name: 0.0 for name in baseline}
    for j, name in enumerate(free):
        std[name] = float(err[j])
    dof = int(y.size - len(free))
    return FitResult(
        params={k: float(v) for k, v in fitted.items()},
        std_errors=std,
        covariance=lm.covariance,
        free_params=list(free),
        chi2=lm.chi2,
        dof=dof,
        converged=lm.converged,
        n_iterations=lm.n_iterations,
        settings={
            "free": list(free),
            "max_iterations": max_iterations,
            "n_bins": int(t.size),
        },
    )


def params_from_fit(result: FitResult) -> TpiParams:
    """Rebuild a TpiParams from a correlation-model fit result."""
    from homlab.model import EmitterModel

    p = result.params
    return TpiParams(
        eta=p["eta"],
        alpha2=p["alpha2"],
        beta=p["beta"],
        tau_c=p["tau_c"],
        emitter=EmitterModel(g0=p["g0"], tau_r=p["tau_r"]),
        sigma_j=p["sigma_j"],
    )
