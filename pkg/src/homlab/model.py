"""Analytic correlation model for emitter-laser two-photon interference.

The measured quantity is the normalized second-order correlation of one
output of an unbalanced interference circuit fed by a sub-Poissonian
emitter (relative intensity ``eta``), a weak coherent laser (``alpha2``)
and uncorrelated background (``beta``):

    g2(tau) = 1 + [eta^2 (g2_qd(tau) - 1)
                   + 2 eta alpha2 exp(-|tau|/tau_c) cos^2(phi)]
              / (eta + alpha2 + beta)^2

with ``phi`` the polarization angle between the two sources and ``tau_c``
the emitter coherence time.  Only intensity ratios matter: scaling
(eta, alpha2, beta) by a common factor leaves the curve unchanged.

Detector timing jitter enters as a Gaussian smearing of the coincidence
time axis; because the model is a sum of two-sided exponentials plus a
constant, the smeared curve has a closed form in terms of erfc, used
throughout for speed and as the analytic counterpart of the generic
grid convolution ``convolve_irf``.

All times are picoseconds, energies microelectronvolts, angles radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import erfc, erfcx

from homlab.errors import GridError, InvalidParamsError, NoInteriorMaximumError

# Reduced Planck constant in micro-eV * ps (CODATA).
HBAR_UEV_PS = 658.2119569

# FWHM of a Gaussian in units of its standard deviation: 2*sqrt(2*ln 2).
GAUSSIAN_FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))

_SQRT2 = math.sqrt(2.0)
_TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)


def sigma_from_jitter(jitter_ps: float, convention: str = "fwhm") -> float:
    """Convert a quoted timing jitter to a Gaussian standard deviation.

    ``convention`` is ``"fwhm"`` (vendor-style full width at half maximum)
    or ``"sigma"`` (the value already is the standard deviation).
    """
    if jitter_ps < 0:
        raise InvalidParamsError(f"jitter_ps must be >= 0 (got {jitter_ps})")
    if convention == "fwhm":
        return jitter_ps / GAUSSIAN_FWHM_PER_SIGMA
    if convention == "sigma":
        return float(jitter_ps)
    raise InvalidParamsError(
        f"jitter convention must be 'fwhm' or 'sigma' (got {convention!r})"
    )


@dataclass(frozen=True)
class EmitterModel:
    """Two-sided exponential autocorrelation of the single-photon emitter.

    g2_qd(tau) = 1 - (1 - g0) exp(-|tau|/tau_r), so g2_qd(0) = g0 and the
    correlation recovers to the Poisson level on the timescale ``tau_r``.
    """

    g0: float
    tau_r: float

    def __post_init__(self):
        if not 0.0 <= self.g0 <= 1.0:
            raise InvalidParamsError(f"g0 must be in [0, 1] (got {self.g0})")
        if not self.tau_r > 0.0:
            raise InvalidParamsError(f"tau_r must be > 0 ps (got {self.tau_r})")


@dataclass(frozen=True)
class TpiParams:
    """Full parameter set of the two-source correlation model.

    eta, alpha2, beta: relative emitter / laser / background intensities
    at the detectors (dimensionless, only ratios matter).
    tau_c: emitter coherence time, ps.  sigma_j: Gaussian instrument
    response standard deviation on the coincidence axis, ps.  phi:
    polarization angle between the sources, radians in [0, pi/2].
    """

    eta: float
    alpha2: float
    beta: float
    tau_c: float
    emitter: EmitterModel
    sigma_j: float = 0.0
    phi: float = 0.0

    def __post_init__(self):
        for name in ("eta", "alpha2", "beta"):
            if getattr(self, name) < 0.0:
                raise InvalidParamsError(
                    f"{name} must be >= 0 (got {getattr(self, name)})"
                )
        if self.eta + self.alpha2 + self.beta <= 0.0:
            raise InvalidParamsError("eta + alpha2 + beta must be > 0")
        if not self.tau_c > 0.0:
            raise InvalidParamsError(f"tau_c must be > 0 ps (got {self.tau_c})")
        if self.sigma_j < 0.0:
            raise InvalidParamsError(f"sigma_j must be >= 0 ps (got {self.sigma_j})")
        if not 0.0 <= self.phi <= math.pi / 2 + 1e-12:
            raise InvalidParamsError(
                f"phi must be in [0, pi/2] rad (got {self.phi})"
            )

    @property
    def intensity_sum(self) -> float:
        return self.eta + self.alpha2 + self.beta


@dataclass
class ModelCurve:
    """A sampled curve over a strictly increasing tau grid symmetric about 0."""

    tau_grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.tau_grid = np.asarray(self.tau_grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.tau_grid.ndim != 1 or self.tau_grid.shape != self.values.shape:
            raise InvalidParamsError("tau_grid and values must be equal-length 1-D")
        if self.tau_grid.size < 2:
            raise InvalidParamsError("curve needs at least two samples")
        if not np.all(np.diff(self.tau_grid) > 0):
            raise InvalidParamsError("tau_grid must be strictly increasing")
        scale = max(1.0, float(np.max(np.abs(self.tau_grid))))
        if not np.allclose(self.tau_grid, -self.tau_grid[::-1], atol=1e-9 * scale):
            raise InvalidParamsError("tau_grid must be symmetric about 0")
        if not np.all(np.isfinite(self.values)):
            raise InvalidParamsError("curve values must be finite")

    @property
    def spacing(self) -> float:
        return float(self.tau_grid[1] - self.tau_grid[0])


def symmetric_grid(tau_max: float, step: float) -> np.ndarray:
    """Uniform grid -n*step..n*step covering at least +-tau_max."""
    if step <= 0 or tau_max <= 0:
        raise InvalidParamsError("tau_max and step must be > 0")
    n = int(math.ceil(tau_max / step))
    return np.arange(-n, n + 1, dtype=float) * step


def g2_qd(tau, emitter: EmitterModel):
    """Emitter autocorrelation 1 - (1 - g0) exp(-|tau|/tau_r); even in tau."""
    t = np.abs(np.asarray(tau, dtype=float))
    out = 1.0 - (1.0 - emitter.g0) * np.exp(-t / emitter.tau_r)
    return float(out) if np.ndim(tau) == 0 else out


def g2_tpi(tau, p: TpiParams):
    """Unsmeared two-source correlation at delay ``tau``."""
    t = np.abs(np.asarray(tau, dtype=float))
    s2 = p.intensity_sum**2
    interference = (
        2.0 * p.eta * p.alpha2 * np.exp(-t / p.tau_c) * math.cos(p.phi) ** 2
    )
    out = 1.0 + (p.eta**2 * (g2_qd(t, p.emitter) - 1.0) + interference) / s2
    return float(out) if np.ndim(tau) == 0 else out


def _exp_times_erfc(a, x):
    """Numerically stable exp(a) * erfc(x) for the exp (x) Gaussian forms.

    For x >= 0 uses erfcx so the exp(a) growth cancels against the erfc
    decay; for x < 0 the companion exponent a is already non-positive.
    """
    a = np.asarray(a, dtype=float)
    x = np.asarray(x, dtype=float)
    pos = x >= 0.0
    out = np.where(
        pos,
        erfcx(np.where(pos, x, 0.0)) * np.exp(a - x * x),
        np.exp(np.where(pos, 0.0, a)) * erfc(np.where(pos, 0.0, x)),
    )
    return out


def convolved_exp_decay(tau, decay_ps: float, sigma_ps: float):
    """exp(-|t|/decay) convolved with a unit-area Gaussian of width sigma.

    Closed form: the half-sum of two mirrored exp*erfc terms,

        E(tau) = 1/2 [ e^{a-} erfc(x-) + e^{a+} erfc(x+) ],
        a+- = sigma^2/(2 T^2) +- tau/T,
        x+- = sigma/(sqrt(2) T) +- tau/(sqrt(2) sigma).

    Even in tau; sigma_ps = 0 returns the bare exponential.
    """
    if decay_ps <= 0:
        raise InvalidParamsError(f"decay_ps must be > 0 (got {decay_ps})")
    if sigma_ps < 0:
        raise InvalidParamsError(f"sigma_ps must be >= 0 (got {sigma_ps})")
    t = np.asarray(tau, dtype=float)
    if sigma_ps == 0.0:
        out = np.exp(-np.abs(t) / decay_ps)
        return float(out) if np.ndim(tau) == 0 else out
    base_a = sigma_ps**2 / (2.0 * decay_ps**2)
    base_x = sigma_ps / (_SQRT2 * decay_ps)
    rt = t / decay_ps
    rx = t / (_SQRT2 * sigma_ps)
    out = 0.5 * (
        _exp_times_erfc(base_a - rt, base_x - rx)
        + _exp_times_erfc(base_a + rt, base_x + rx)
    )
    return float(out) if np.ndim(tau) == 0 else out


def convolved_exp_decay_partials(tau, decay_ps: float, sigma_ps: float):
    """Value and partial derivatives (d/d decay, d/d sigma) of the smeared
    exponential, for analytic fit Jacobians.  Requires sigma_ps > 0 for the
    sigma derivative; at sigma_ps = 0 the decay derivative falls back to the
    bare-exponential form and the sigma derivative is returned as zero.
    """
    t = np.asarray(tau, dtype=float)
    if sigma_ps == 0.0:
        at = np.abs(t)
        e = np.exp(-at / decay_ps)
        return e, e * at / decay_ps**2, np.zeros_like(e)
    base_a = sigma_ps**2 / (2.0 * decay_ps**2)
    base_x = sigma_ps / (_SQRT2 * decay_ps)
    rt = t / decay_ps
    rx = t / (_SQRT2 * sigma_ps)
    term_m = _exp_times_erfc(base_a - rt, base_x - rx)
    term_p = _exp_times_erfc(base_a + rt, base_x + rx)
    value = 0.5 * (term_m + term_p)
    # exp(a+-) * gauss factor exp(-x+-^2) collapses to exp(-tau^2/(2 sigma^2))
    gauss = np.exp(-(t * t) / (2.0 * sigma_ps**2))

    da_m_dT = -(sigma_ps**2) / decay_ps**3 + t / decay_ps**2
    da_p_dT = -(sigma_ps**2) / decay_ps**3 - t / decay_ps**2
    dx_dT = -sigma_ps / (_SQRT2 * decay_ps**2)  # same for both terms
    d_decay = 0.5 * (term_m * da_m_dT + term_p * da_p_dT) - 0.5 * (
        _TWO_OVER_SQRT_PI * gauss * 2.0 * dx_dT
    )

    da_dsig = sigma_ps / decay_ps**2
    dx_m_dsig = 1.0 / (_SQRT2 * decay_ps) + t / (_SQRT2 * sigma_ps**2)
    dx_p_dsig = 1.0 / (_SQRT2 * decay_ps) - t / (_SQRT2 * sigma_ps**2)
    d_sigma = 0.5 * (term_m + term_p) * da_dsig - 0.5 * (
        _TWO_OVER_SQRT_PI * gauss * (dx_m_dsig + dx_p_dsig)
    )
    return value, d_decay, d_sigma


def g2_tpi_convolved(tau, p: TpiParams):
    """Jitter-smeared correlation: the closed form of g2_tpi convolved with
    a Gaussian of standard deviation ``p.sigma_j``.

    The constant Poisson level is preserved; each exponential term is
    replaced by its smeared counterpart.
    """
    t = np.asarray(tau, dtype=float)
    s2 = p.intensity_sum**2
    e_r = convolved_exp_decay(t, p.emitter.tau_r, p.sigma_j)
    e_c = convolved_exp_decay(t, p.tau_c, p.sigma_j)
    out = 1.0 + (
        p.eta**2 * (p.emitter.g0 - 1.0) * e_r
        + 2.0 * p.eta * p.alpha2 * math.cos(p.phi) ** 2 * e_c
    ) / s2
    return float(out) if np.ndim(tau) == 0 else out


def _parallel_perp(p: TpiParams, tau):
    import dataclasses

    par = dataclasses.replace(p, phi=0.0)
    perp = dataclasses.replace(p, phi=math.pi / 2)
    return g2_tpi_convolved(tau, par), g2_tpi_convolved(tau, perp)


def visibility_curve(p: TpiParams, tau_grid) -> ModelCurve:
    """Interference visibility V(tau) = (g2_par - g2_perp) / g2_perp.

    Both branches are evaluated from ``p`` with the polarization angle
    forced to 0 (parallel) and pi/2 (crossed); ``p.phi`` is ignored.
    Jitter smearing is included via ``p.sigma_j``.
    """
    grid = np.asarray(tau_grid, dtype=float)
    g_par, g_perp = _parallel_perp(p, grid)
    if np.any(g_perp <= 0.0):
        raise InvalidParamsError(
            "crossed-polarized correlation reaches zero on the grid; "
            "visibility undefined (needs beta > 0 or g0 > 0)"
        )
    return ModelCurve(grid, (g_par - g_perp) / g_perp)


def visibility_at_zero(
    r: float,
    emitter: EmitterModel,
    tau_c: float,
    sigma_j: float,
    beta_over_eta: float,
) -> float:
    """Smeared zero-delay visibility as a function of the laser/emitter
    intensity ratio ``r`` = alpha2/eta, with background fixed relative to
    the emitter intensity."""
    e_r0 = convolved_exp_decay(0.0, emitter.tau_r, sigma_j)
    e_c0 = convolved_exp_decay(0.0, tau_c, sigma_j)
    s2 = (1.0 + r + beta_over_eta) ** 2
    denom = s2 + (emitter.g0 - 1.0) * e_r0
    if denom <= 0.0:
        raise InvalidParamsError("crossed-polarized correlation is zero at tau=0")
    return 2.0 * r * e_c0 / denom


def ideal_max_visibility(r: float) -> float:
    """Zero-delay visibility 2/(2 + r) for a perfect emitter, no background
    and no timing jitter, at laser/emitter intensity ratio r = alpha2/eta."""
    if r < 0:
        raise InvalidParamsError(f"intensity ratio must be >= 0 (got {r})")
    return 2.0 / (2.0 + r)


def coherence_decay(delta, tau_c: float):
    """Single-photon fringe visibility exp(-|delta|/tau_c) at path delay delta."""
    if tau_c <= 0:
        raise InvalidParamsError(f"tau_c must be > 0 ps (got {tau_c})")
    out = np.exp(-np.abs(np.asarray(delta, dtype=float)) / tau_c)
    return float(out) if np.ndim(delta) == 0 else out


def coherence_to_bandwidth(tau_c: float) -> float:
    """Fourier-limited spectral bandwidth hbar/tau_c in micro-eV."""
    if tau_c <= 0:
        raise InvalidParamsError(f"tau_c must be > 0 ps (got {tau_c})")
    return HBAR_UEV_PS / tau_c


def convolve_irf(curve: ModelCurve, sigma_j: float) -> ModelCurve:
    """Convolve a uniformly sampled curve with a unit-area Gaussian.

    Direct kernel summation, kernel truncated at 6 sigma and renormalized
    to unit sum, so a constant curve is reproduced exactly.  The grid must
    resolve the kernel (spacing <= sigma_j/2) and the curve must have
    reached its asymptote over the outermost 6 sigma on each side, which
    are extended as constants.  Discretization error scales with the
    square of the grid spacing.
    """
    if sigma_j < 0:
        raise InvalidParamsError(f"sigma_j must be >= 0 ps (got {sigma_j})")
    if sigma_j == 0.0:
        return ModelCurve(curve.tau_grid.copy(), curve.values.copy())
    steps = np.diff(curve.tau_grid)
    h = float(steps[0])
    if not np.allclose(steps, h, rtol=1e-9, atol=1e-12):
        raise GridError("curve grid must be uniform")
    if h > sigma_j / 2.0:
        raise GridError(
            f"grid too coarse for convolution: spacing {h:g} ps exceeds "
            f"sigma_j/2 = {sigma_j / 2.0:g} ps"
        )
    half = int(math.ceil(6.0 * sigma_j / h))
    if curve.values.size <= 2 * half:
        raise GridError(
            "grid too short: needs more than 6 sigma of padding on each side"
        )
    flat_tol = 1e-5 * max(float(np.max(np.abs(curve.values))), 1e-30)
    for tail in (curve.values[:half], curve.values[-half:]):
        if float(np.ptp(tail)) > flat_tol:
            raise GridError(
                "grid too short: curve still varies within 6 sigma of an "
                "edge, constant extension would bias the result"
            )
    k = np.arange(-half, half + 1, dtype=float) * h
    kernel = np.exp(-(k * k) / (2.0 * sigma_j**2))
    kernel /= kernel.sum()
    padded = np.concatenate(
        [
            np.full(half, curve.values[0]),
            curve.values,
            np.full(half, curve.values[-1]),
        ]
    )
    return ModelCurve(curve.tau_grid.copy(), np.convolve(padded, kernel, mode="valid"))


def optimal_ratio(
    p: TpiParams,
    r_bounds: tuple[float, float] = (0.05, 2.0),
    xatol: float = 1e-4,
    beta_over_eta: float | None = None,
) -> float:
    """Laser/emitter intensity ratio maximizing the smeared zero-delay
    visibility over a bracket.

    The search varies alpha2 with the emitter intensity normalized to 1 and
    the background fixed at ``beta_over_eta`` (defaults to p.beta/p.eta);
    by scale invariance this loses no generality.  Raises
    NoInteriorMaximumError when the maximizer lands on the bracket edge,
    i.e. the visibility is monotone over the bracket.
    """
    r_lo, r_hi = float(r_bounds[0]), float(r_bounds[1])
    if not 0.0 < r_lo < r_hi:
        raise InvalidParamsError(f"need 0 < r_lo < r_hi (got {r_bounds})")
    if beta_over_eta is None:
        if p.eta <= 0:
            raise InvalidParamsError(
                "optimal_ratio needs eta > 0 to form beta/eta; "
                "pass beta_over_eta explicitly"
            )
        beta_over_eta = p.beta / p.eta

    def negative_v0(r: float) -> float:
        return -visibility_at_zero(r, p.emitter, p.tau_c, p.sigma_j, beta_over_eta)

    res = minimize_scalar(
        negative_v0, bounds=(r_lo, r_hi), method="bounded", options={"xatol": xatol}
    )
    r_star = float(res.x)
    if r_star - r_lo < 2.0 * xatol or r_hi - r_star < 2.0 * xatol:
        side = "lower" if r_star - r_lo < 2.0 * xatol else "upper"
        raise NoInteriorMaximumError(
            f"visibility is monotone over [{r_lo:g}, {r_hi:g}]: maximizer "
            f"sits on the {side} bound (r = {r_star:.6g}); widen the bracket"
        )
    return r_star
