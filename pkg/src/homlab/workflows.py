"""Scenario-level orchestration shared by the service and the CLI.

Each function takes a validated Scenario plus the minimal extra inputs
and returns plain domain objects; no file paths or transport concerns
here.  Simulation work is split into fixed-size chunks with one derived
seed per chunk, so results are identical for any worker-thread count.
"""

from __future__ import annotations

import dataclasses
import math
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from homlab import estimate
from homlab.errors import InvalidParamsError
from homlab.io import Scenario
from homlab.model import (
    coherence_to_bandwidth,
    g2_tpi_convolved,
    optimal_ratio,
)
from homlab.simulate import (
    CorrelationHistogram,
    histogram,
    histogram_window,
    merge_histograms,
    sample_n_coincidences,
)

PHI_PAR = 0.0
PHI_PERP = math.pi / 2

# Pairs per simulation chunk; fixed so the chunk seed layout (and thus
# every sampled delay) is independent of the thread count.
CHUNK_PAIRS = 250_000


def resolve_threads(threads: int | None = None) -> int:
    """Worker count: the requested value capped by HOMLAB_THREADS.

    With no request, the cap itself (or 1 when unset) is used.
    """
    raw = os.environ.get("HOMLAB_THREADS")
    cap = None
    if raw is not None:
        try:
            cap = int(raw)
        except ValueError:
            raise InvalidParamsError(
                f"HOMLAB_THREADS must be an integer (got {raw!r})"
            ) from None
        if cap < 1:
            raise InvalidParamsError(
                f"HOMLAB_THREADS must be >= 1 (got {cap})"
            )
    if threads is None:
        threads = cap if cap is not None else 1
    if threads < 1:
        raise InvalidParamsError(f"thread count must be >= 1 (got {threads})")
    return min(threads, cap) if cap is not None else threads


def scenario_tau_centers(scenario: Scenario) -> np.ndarray:
    geometry_probe = histogram([], scenario.bin_width_ps, scenario.tau_range_ps)
    return geometry_probe.tau_centers()


def model_curve_for(scenario: Scenario, phi: float):
    """Smeared model curve sampled on the scenario's bin centers."""
    centers = scenario_tau_centers(scenario)
    values = g2_tpi_convolved(centers, scenario.tpi_params(phi=phi))
    return centers, values


def simulate_histograms(
    scenario: Scenario,
    n_pairs: int,
    seed: int | None = None,
    threads: int | None = None,
) -> tuple[CorrelationHistogram, CorrelationHistogram]:
    """Sampled coincidence histograms for both polarization settings.

    Exactly ``n_pairs`` accepted pairs per polarization, every delay
    inside the bin range (overflow stays 0).  The top-level ``seed``
    (scenario seed by default) fans out to one sub-seed per chunk.
    """
    if n_pairs < 1:
        raise InvalidParamsError(f"n_pairs must be >= 1 (got {n_pairs})")
    if seed is None:
        seed = scenario.seed
    threads = resolve_threads(threads)
    window = histogram_window(scenario.bin_width_ps, scenario.tau_range_ps)

    jobs = []
    for pol_index, phi in ((0, PHI_PAR), (1, PHI_PERP)):
        params = scenario.tpi_params(phi=phi)
        remaining = n_pairs
        chunk_index = 0
        while remaining > 0:
            count = min(CHUNK_PAIRS, remaining)
            jobs.append((pol_index, params, chunk_index, count))
            remaining -= count
            chunk_index += 1

    def run(job):
        pol_index, params, chunk_index, count = job
        sub_seed = np.random.SeedSequence((seed, pol_index, chunk_index))
        taus = sample_n_coincidences(params, count, window, sub_seed)
        return histogram(
            taus,
            scenario.bin_width_ps,
            scenario.tau_range_ps,
            n_start=count,
            n_stop=count,
        )

    if threads == 1:
        results = [run(job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))

    out = []
    for pol_index in (0, 1):
        parts = [
            h for h, job in zip(results, jobs) if job[0] == pol_index
        ]
        merged = merge_histograms(parts)
        out.append(
            dataclasses.replace(
                merged, span_ps=scenario.span_ps, seed_list=[int(seed)]
            )
        )
    return out[0], out[1]


def normalized_pair(
    scenario: Scenario,
    h_par: CorrelationHistogram,
    h_perp: CorrelationHistogram,
):
    tail = scenario.tail_window_ps
    return (
        estimate.normalize_histogram(h_par, tail),
        estimate.normalize_histogram(h_perp, tail),
    )


def fit_histograms(
    scenario: Scenario,
    h_par: CorrelationHistogram,
    h_perp: CorrelationHistogram,
    free=None,
    freeze=(),
    max_iterations: int = 500,
) -> estimate.FitResult:
    """Correlation-model fit of a simulated or loaded histogram pair.

    ``free`` defaults to the standard identifiable set; ``freeze``
    removes names from it.
    """
    g_par, g_perp = normalized_pair(scenario, h_par, h_perp)
    chosen = list(estimate.DEFAULT_FREE if free is None else free)
    for name in freeze:
        if name not in estimate.FITTABLE_PARAMS:
            raise InvalidParamsError(f"unknown parameter to freeze: {name!r}")
        if name in chosen:
            chosen.remove(name)
    return estimate.fit_g2_model(
        g_par,
        g_perp,
        scenario.tpi_params(),
        free=tuple(chosen),
        max_iterations=max_iterations,
    )


def visibility_histograms(
    scenario: Scenario,
    h_par: CorrelationHistogram,
    h_perp: CorrelationHistogram,
) -> estimate.VisibilityCurve:
    g_par, g_perp = normalized_pair(scenario, h_par, h_perp)
    return estimate.visibility_from_histograms(g_par, g_perp)


def optimize_ratio(
    scenario: Scenario, r_bounds: tuple[float, float] = (0.05, 2.0)
) -> float:
    return optimal_ratio(
        scenario.tpi_params(),
        r_bounds=r_bounds,
        beta_over_eta=scenario.beta_over_eta,
    )


def coherence_fit(points, fix_amplitude: bool = False) -> estimate.FitResult:
    return estimate.fit_exponential_visibility(points, fix_amplitude=fix_amplitude)


def bandwidth_uev(tau_c_ps: float) -> float:
    return coherence_to_bandwidth(tau_c_ps)
