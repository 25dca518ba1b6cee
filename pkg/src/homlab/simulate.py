"""Monte Carlo photon streams, detector effects and coincidence counting.

Event times are integer picoseconds (int64) throughout, so histogramming
is exact and reproducible; continuous mathematics lives in ``model``.
All randomness flows through ``numpy.random.Generator`` seeded per call,
making every sampler bit-reproducible.

Correlated photon pairs are not built from classical click streams
(classical streams cannot show the interference bunching); instead
``sample_coincidences`` draws pair delays directly from the smeared
model curve by rejection sampling, which is the statistical oracle the
estimation pipeline is validated against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import NamedTuple, Sequence

import numpy as np

from homlab.errors import CapacityError, InvalidParamsError, RegimeError
from homlab.model import EmitterModel, TpiParams, g2_tpi_convolved

PS_PER_S = 1_000_000_000_000

# Cap on the expected event count of any one sampled stream.
MAX_EXPECTED_EVENTS = 50_000_000


class Channel(IntEnum):
    D1 = 0
    D2 = 1


class DetectionRecord(NamedTuple):
    time_ps: int
    channel: Channel


@dataclass(frozen=True)
class DetectorSpec:
    """Detector imperfections applied to an ideal photon stream."""

    jitter_sigma_ps: float = 0.0
    dark_rate_cps: float = 0.0
    dead_time_ps: int = 0
    efficiency: float = 1.0

    def __post_init__(self):
        if self.jitter_sigma_ps < 0:
            raise InvalidParamsError("jitter_sigma_ps must be >= 0")
        if self.dark_rate_cps < 0:
            raise InvalidParamsError("dark_rate_cps must be >= 0")
        if self.dead_time_ps < 0:
            raise InvalidParamsError("dead_time_ps must be >= 0")
        if not 0.0 <= self.efficiency <= 1.0:
            raise InvalidParamsError("efficiency must be in [0, 1]")


@dataclass
class DetectionSeries:
    """Clicks of one detector channel, times sorted ascending."""

    channel: Channel
    times_ps: np.ndarray

    def __post_init__(self):
        self.channel = Channel(self.channel)
        self.times_ps = np.asarray(self.times_ps, dtype=np.int64)
        if self.times_ps.ndim != 1:
            raise InvalidParamsError("times_ps must be 1-D")
        if self.times_ps.size and np.any(np.diff(self.times_ps) < 0):
            raise InvalidParamsError("times_ps must be sorted ascending")

    def records(self) -> list[DetectionRecord]:
        return [DetectionRecord(int(t), self.channel) for t in self.times_ps]


def _bin_geometry(bin_width_ps: int, tau_range_ps: float):
    """Centered-bin layout covering at least +-tau_range.

    Returns (bin_width, n_bins, tau_min2) with tau_min2 the lower edge in
    half-picosecond units, so edges are exact for odd bin widths too.
    The center bin straddles tau = 0.
    """
    b = int(bin_width_ps)
    if b != bin_width_ps or b <= 0:
        raise InvalidParamsError(
            f"bin_width_ps must be a positive integer (got {bin_width_ps})"
        )
    if tau_range_ps <= 0:
        raise InvalidParamsError(f"tau_range_ps must be > 0 (got {tau_range_ps})")
    m = max(1, math.ceil(tau_range_ps / b - 0.5))
    n_bins = 2 * m + 1
    tau_min2 = -n_bins * b
    return b, n_bins, tau_min2


@dataclass(eq=False)
class CorrelationHistogram:
    """Coincidence counts over contiguous signed-delay bins.

    The bin layout is symmetric about zero with a center bin straddling
    tau = 0; ``tau_min_ps`` is the lower edge of the first bin.  Delays
    outside the range are tallied in ``overflow``, never dropped.
    ``span_ps`` is the acquisition time the counts correspond to and
    ``seed_list`` records the RNG seeds that produced them.
    """

    bin_width_ps: int
    tau_min_ps: float
    counts: np.ndarray
    overflow: int = 0
    span_ps: int = 0
    n_start: int = 0
    n_stop: int = 0
    seed_list: list = field(default_factory=list)

    def __post_init__(self):
        self.bin_width_ps = int(self.bin_width_ps)
        self.tau_min_ps = float(self.tau_min_ps)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.overflow = int(self.overflow)
        self.span_ps = int(self.span_ps)
        self.seed_list = list(self.seed_list)
        if self.bin_width_ps <= 0:
            raise InvalidParamsError("bin_width_ps must be > 0")
        if self.counts.ndim != 1 or self.counts.size == 0:
            raise InvalidParamsError("counts must be a non-empty 1-D array")
        if np.any(self.counts < 0) or self.overflow < 0:
            raise InvalidParamsError("counts and overflow must be >= 0")
        upper = self.tau_min_ps + self.counts.size * self.bin_width_ps
        if abs(upper + self.tau_min_ps) > 1e-6:
            raise InvalidParamsError("bin range must be symmetric about 0")

    @property
    def n_bins(self) -> int:
        return int(self.counts.size)

    def tau_centers(self) -> np.ndarray:
        return self.tau_min_ps + (np.arange(self.n_bins) + 0.5) * self.bin_width_ps

    def total_counts(self) -> int:
        return int(self.counts.sum()) + self.overflow

    def __eq__(self, other):
        if not isinstance(other, CorrelationHistogram):
            return NotImplemented
        return (
            self.bin_width_ps == other.bin_width_ps
            and self.tau_min_ps == other.tau_min_ps
            and np.array_equal(self.counts, other.counts)
            and self.overflow == other.overflow
            and self.span_ps == other.span_ps
            and self.n_start == other.n_start
            and self.n_stop == other.n_stop
            and self.seed_list == other.seed_list
        )


def histogram(
    taus,
    bin_width_ps: int,
    tau_range_ps: float,
    span_ps: int = 0,
    n_start: int = 0,
    n_stop: int = 0,
    seed_list: Sequence = (),
) -> CorrelationHistogram:
    """Histogram integer pair delays into the centered-bin layout.

    Every input delay lands either in a bin or in the overflow counter,
    so total_counts() always equals the input length.  Empty input gives
    an all-zero histogram.
    """
    b, n_bins, tau_min2 = _bin_geometry(bin_width_ps, tau_range_ps)
    t = np.asarray(taus)
    if t.size and not np.issubdtype(t.dtype, np.integer):
        rounded = np.rint(t)
        if not np.all(t == rounded):
            raise InvalidParamsError("delays must be integer picoseconds")
        t = rounded
    t = t.astype(np.int64, copy=False)
    idx = (2 * t - tau_min2) // (2 * b)
    inside = (idx >= 0) & (idx < n_bins)
    counts = np.bincount(idx[inside], minlength=n_bins)
    return CorrelationHistogram(
        bin_width_ps=b,
        tau_min_ps=tau_min2 / 2.0,
        counts=counts,
        overflow=int(t.size - int(inside.sum())),
        span_ps=span_ps,
        n_start=n_start,
        n_stop=n_stop,
        seed_list=list(seed_list),
    )


def histogram_window(bin_width_ps: int, tau_range_ps: float) -> int:
    """Largest integer delay that falls inside the histogram bin range.

    Pair samplers bounded by this window never produce overflow counts.
    """
    _, _, tau_min2 = _bin_geometry(bin_width_ps, tau_range_ps)
    return (-tau_min2 - 1) // 2


def merge_histograms(hists: Sequence[CorrelationHistogram]) -> CorrelationHistogram:
    """Sum histograms of identical bin layout.

    Counts, overflow, event counters and spans add; seed lists concatenate
    in sorted order so the merge is commutative as well as associative.
    """
    if not hists:
        raise InvalidParamsError("nothing to merge")
    first = hists[0]
    counts = first.counts.copy()
    overflow, span, n_start, n_stop = (
        first.overflow,
        first.span_ps,
        first.n_start,
        first.n_stop,
    )
    seeds = list(first.seed_list)
    for h in hists[1:]:
        if (
            h.bin_width_ps != first.bin_width_ps
            or h.tau_min_ps != first.tau_min_ps
            or h.n_bins != first.n_bins
        ):
            raise InvalidParamsError("histograms have different bin layouts")
        counts += h.counts
        overflow += h.overflow
        span += h.span_ps
        n_start += h.n_start
        n_stop += h.n_stop
        seeds.extend(h.seed_list)
    return CorrelationHistogram(
        bin_width_ps=first.bin_width_ps,
        tau_min_ps=first.tau_min_ps,
        counts=counts,
        overflow=overflow,
        span_ps=span,
        n_start=n_start,
        n_stop=n_stop,
        seed_list=sorted(seeds, key=repr),
    )


def _check_capacity(expected: float, what: str):
    if expected > MAX_EXPECTED_EVENTS:
        raise CapacityError(
            f"expected {what} count {expected:.3g} exceeds the cap "
            f"{MAX_EXPECTED_EVENTS:.3g}; shorten the span or lower the rate"
        )


def sample_laser_stream(rate_cps: float, span_ps: int, seed) -> np.ndarray:
    """Homogeneous Poisson click stream over [0, span], integer ps times."""
    if rate_cps < 0:
        raise InvalidParamsError(f"rate_cps must be >= 0 (got {rate_cps})")
    if span_ps <= 0:
        raise InvalidParamsError(f"span_ps must be > 0 (got {span_ps})")
    expected = rate_cps * span_ps / PS_PER_S
    _check_capacity(expected, "laser event")
    rng = np.random.default_rng(seed)
    n = int(rng.poisson(expected))
    times = rng.integers(0, int(span_ps) + 1, size=n, dtype=np.int64)
    times.sort()
    return times


def sample_qd_stream(
    rate_cps: float, emitter: EmitterModel, span_ps: int, seed
) -> np.ndarray:
    """Antibunched click stream by renewal thinning of a Poisson stream.

    A candidate at gap d after the last accepted event survives with
    probability g2_qd(d), which in the low-occupancy regime gives a pair
    correlation matching the emitter model.  Each candidate is converted
    to a minimum acceptable gap (inverting the survival probability
    against one uniform draw), so the thinning is exact with no tail
    cutoff.  Requires rate * tau_r (occupancy) < 0.1.
    """
    if rate_cps < 0:
        raise InvalidParamsError(f"rate_cps must be >= 0 (got {rate_cps})")
    if span_ps <= 0:
        raise InvalidParamsError(f"span_ps must be > 0 (got {span_ps})")
    occupancy = rate_cps * emitter.tau_r / PS_PER_S
    if occupancy >= 0.1:
        raise RegimeError(
            f"rate * tau_r = {occupancy:.3g} is outside the low-occupancy "
            "regime (< 0.1) where renewal thinning reproduces the target "
            "correlation"
        )
    expected = rate_cps * span_ps / PS_PER_S
    _check_capacity(expected, "emitter event")
    rng = np.random.default_rng(seed)
    n = int(rng.poisson(expected))
    times = rng.integers(0, int(span_ps) + 1, size=n, dtype=np.int64)
    times.sort()
    u = rng.random(n)
    # Survival condition u < 1 - (1-g0) exp(-d/tau_r) rearranges to a
    # per-candidate minimum gap; u <= g0 accepts at any gap.
    min_gap = np.zeros(n)
    tight = u > emitter.g0
    if emitter.g0 < 1.0:
        with np.errstate(divide="ignore"):
            min_gap[tight] = -emitter.tau_r * np.log(
                (1.0 - u[tight]) / (1.0 - emitter.g0)
            )
    accepted = np.empty(n, dtype=np.int64)
    k = 0
    last = -np.inf
    for t, gap_needed in zip(times, min_gap):
        if t - last > gap_needed:
            accepted[k] = t
            k += 1
            last = t
    return accepted[:k].copy()


def dead_time_filter(times_ps: np.ndarray, dead_time_ps: int) -> np.ndarray:
    """Drop events closer than dead_time to the last accepted event.

    Idempotent: surviving events are mutually separated by >= dead_time,
    so a second pass accepts them all.
    """
    t = np.asarray(times_ps, dtype=np.int64)
    if dead_time_ps < 0:
        raise InvalidParamsError("dead_time_ps must be >= 0")
    if dead_time_ps == 0 or t.size == 0:
        return t.copy()
    keep = np.empty(t.size, dtype=np.int64)
    k = 0
    last = None
    for v in t:
        if last is None or v - last >= dead_time_ps:
            keep[k] = v
            k += 1
            last = v
    return keep[:k].copy()


def apply_detector(
    stream: np.ndarray,
    spec: DetectorSpec,
    channel: Channel,
    seed,
    span_ps: int | None = None,
) -> DetectionSeries:
    """Pass an ideal photon stream through a detector model.

    Order of effects: binomial efficiency loss, Gaussian timing jitter
    (rounded to integer ps), merge with a dark-count Poisson stream,
    dead-time filtering of the combined click sequence.  ``span_ps``
    bounds the output times when given and is required when dark counts
    are enabled (the dark stream needs a duration).
    """
    t = np.asarray(stream, dtype=np.int64)
    if t.size and np.any(np.diff(t) < 0):
        raise InvalidParamsError("input stream must be sorted ascending")
    if spec.dark_rate_cps > 0 and span_ps is None:
        raise InvalidParamsError(
            "span_ps is required when dark_rate_cps > 0"
        )
    rng = np.random.default_rng(seed)
    if spec.efficiency < 1.0:
        t = t[rng.random(t.size) < spec.efficiency]
    if spec.jitter_sigma_ps > 0 and t.size:
        shifts = np.rint(rng.normal(0.0, spec.jitter_sigma_ps, t.size))
        t = t + shifts.astype(np.int64)
    if spec.dark_rate_cps > 0:
        dark = sample_laser_stream(
            spec.dark_rate_cps, span_ps, rng.integers(0, 2**63 - 1)
        )
        t = np.concatenate([t, dark])
    if span_ps is not None:
        t = t[(t >= 0) & (t <= span_ps)]
    else:
        t = t[t >= 0]
    t.sort()
    t = dead_time_filter(t, spec.dead_time_ps)
    return DetectionSeries(channel=channel, times_ps=t)


def _g2_envelope(p: TpiParams, tau_window_ps: int) -> float:
    """Upper bound (with 1% margin) on g2 over the integer delay window."""
    reach = int(math.ceil(45.0 * max(p.tau_c, p.emitter.tau_r, p.sigma_j)))
    grid = np.arange(0, min(int(tau_window_ps), reach) + 1, dtype=float)
    return 1.01 * float(np.max(g2_tpi_convolved(grid, p)))


def sample_coincidences(
    p: TpiParams, pair_rate_cps: float, span_ps: int, tau_window_ps: int, seed
) -> np.ndarray:
    """Pair delays distributed as the smeared correlation curve.

    Candidate delays are uniform integers on [-window, +window]; each is
    accepted with probability g2(tau)/envelope, so the delay histogram
    converges to the model curve.  The candidate count is Poisson with
    mean pair_rate * span; the accepted count is correspondingly smaller
    by the mean acceptance ratio.
    """
    _validate_window(p, tau_window_ps)
    if pair_rate_cps < 0:
        raise InvalidParamsError("pair_rate_cps must be >= 0")
    if span_ps <= 0:
        raise InvalidParamsError("span_ps must be > 0")
    expected = pair_rate_cps * span_ps / PS_PER_S
    _check_capacity(expected, "candidate pair")
    rng = np.random.default_rng(seed)
    n = int(rng.poisson(expected))
    return _rejection_draw(p, n, int(tau_window_ps), rng)


def sample_n_coincidences(
    p: TpiParams, n_pairs: int, tau_window_ps: int, seed
) -> np.ndarray:
    """Exactly n_pairs accepted delays from the rejection sampler."""
    _validate_window(p, tau_window_ps)
    if n_pairs < 0:
        raise InvalidParamsError("n_pairs must be >= 0")
    _check_capacity(float(n_pairs), "accepted pair")
    rng = np.random.default_rng(seed)
    envelope = _g2_envelope(p, int(tau_window_ps))
    out = []
    have = 0
    while have < n_pairs:
        # Acceptance ratio is at worst ~1/envelope; oversize modestly.
        batch = max(1024, int(1.2 * (n_pairs - have) * envelope))
        batch = min(batch, 4_000_000)
        taus = _rejection_batch(p, batch, int(tau_window_ps), envelope, rng)
        out.append(taus)
        have += taus.size
    return np.concatenate(out)[:n_pairs] if out else np.empty(0, dtype=np.int64)


def _validate_window(p: TpiParams, tau_window_ps: int):
    needed = 10.0 * max(p.tau_c, p.emitter.tau_r)
    if tau_window_ps < needed:
        raise InvalidParamsError(
            f"tau_window_ps must cover the correlation structure: need "
            f">= {needed:g} ps, got {tau_window_ps}"
        )


def _rejection_batch(p, n, window, envelope, rng):
    taus = rng.integers(-window, window + 1, size=n, dtype=np.int64)
    u = rng.random(n)
    g = g2_tpi_convolved(taus.astype(float), p)
    return taus[u * envelope < g]


def _rejection_draw(p, n, window, rng):
    envelope = _g2_envelope(p, window)
    return _rejection_batch(p, n, window, envelope, rng)


def correlate_streams(
    d1, d2, bin_width_ps: int, tau_range_ps: float, span_ps: int = 0
) -> CorrelationHistogram:
    """Start-multi-stop correlator: histogram of (t2 - t1) over all pairs
    within the histogram range.

    Channel 1 events are starts, channel 2 events stops; for each start
    every stop within the delay window is counted (not just the first).
    Pairs outside the window are never collected, so overflow is 0.
    Cost is O(N log N + total pairs).
    """
    t1 = _as_times(d1)
    t2 = _as_times(d2)
    b, n_bins, tau_min2 = _bin_geometry(bin_width_ps, tau_range_ps)
    # Largest integer delays with 2*tau in [tau_min2, -tau_min2).
    lo_int = -((-tau_min2) // 2)
    hi_int = (-tau_min2 - 1) // 2
    lo = np.searchsorted(t2, t1 + lo_int, side="left")
    hi = np.searchsorted(t2, t1 + hi_int, side="right")
    counts_per_start = hi - lo
    total = int(counts_per_start.sum())
    if total:
        # Flatten the per-start stop ranges into one index vector.
        starts_rep = np.repeat(np.arange(t1.size), counts_per_start)
        offsets = np.arange(total) - np.repeat(
            np.cumsum(counts_per_start) - counts_per_start, counts_per_start
        )
        stop_idx = np.repeat(lo, counts_per_start) + offsets
        taus = t2[stop_idx] - t1[starts_rep]
    else:
        taus = np.empty(0, dtype=np.int64)
    return histogram(
        taus,
        b,
        tau_range_ps,
        span_ps=span_ps,
        n_start=int(t1.size),
        n_stop=int(t2.size),
    )


def _as_times(d) -> np.ndarray:
    if isinstance(d, DetectionSeries):
        return d.times_ps
    t = np.asarray(d, dtype=np.int64)
    if t.ndim != 1:
        raise InvalidParamsError("detection stream must be 1-D")
    if t.size and np.any(np.diff(t) < 0):
        raise InvalidParamsError("detection stream must be sorted ascending")
    return t
