"""On-disk formats: scenario configs, timestamps, histograms, curves, reports.

Conventions: JSON for human-edited artifacts (scenarios, histograms, fit
reports), CSV for curve tables, a compact binary record format only for
bulk timestamp data.  Times are integer picoseconds, energies micro-eV,
rates counts/s; units are embedded in the field names.  All writers go
through a temp file and an atomic rename.
"""

from __future__ import annotations

import csv
import json
import math
import os
from importlib import resources
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from homlab.errors import FileFormatError, HomlabError, ScenarioError
from homlab.estimate import FitResult
from homlab.model import EmitterModel, TpiParams, sigma_from_jitter
from homlab.simulate import (
    Channel,
    CorrelationHistogram,
    DetectionSeries,
    DetectorSpec,
)

TIMESTAMP_MAGIC = b"TPI1"
_RECORD_DTYPE = np.dtype([("time_ps", "<i8"), ("channel", "u1")])

_HISTOGRAM_FIELDS = (
    "bin_width_ps",
    "tau_min_ps",
    "counts",
    "overflow",
    "span_ps",
    "n_start",
    "n_stop",
    "seed_list",
)


class DetectorSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    jitter_sigma_ps: float = Field(0.0, ge=0)
    dark_rate_cps: float = Field(0.0, ge=0)
    dead_time_ps: int = Field(0, ge=0)
    efficiency: float = Field(1.0, ge=0, le=1)

    def spec(self) -> DetectorSpec:
        return DetectorSpec(
            jitter_sigma_ps=self.jitter_sigma_ps,
            dark_rate_cps=self.dark_rate_cps,
            dead_time_ps=self.dead_time_ps,
            efficiency=self.efficiency,
        )


class TpiBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")

    eta: float = Field(ge=0)
    alpha2: float = Field(ge=0)
    beta: float = Field(ge=0)
    tau_c_ps: float = Field(gt=0)
    g0: float = Field(ge=0, le=1)
    tau_r_ps: float = Field(gt=0)
    phi_rad: float = Field(0.0, ge=0, le=math.pi / 2)


class Scenario(BaseModel):
    """Complete description of one simulated acquisition."""

    model_config = ConfigDict(extra="forbid")

    name: str = "unnamed"
    qd_rate_cps: float = Field(ge=0)
    laser_rate_cps: float = Field(ge=0)
    pair_rate_cps: float = Field(ge=0)
    span_ps: int = Field(gt=0)
    bin_width_ps: int = Field(48, gt=0)
    tau_range_ps: float = Field(gt=0)
    tail_window_ps: Optional[float] = Field(None, gt=0)
    seed: int = Field(ge=0, lt=2**64)
    jitter_convention: Literal["fwhm", "sigma"] = "fwhm"
    jitter_ps: float = Field(ge=0)
    beta_over_eta: float = Field(0.02, ge=0)
    tpi: TpiBlock
    detectors: dict[Literal["d1", "d2"], DetectorSettings]

    def sigma_j(self) -> float:
        return sigma_from_jitter(self.jitter_ps, self.jitter_convention)

    def emitter(self) -> EmitterModel:
        return EmitterModel(g0=self.tpi.g0, tau_r=self.tpi.tau_r_ps)

    def tpi_params(self, phi: float | None = None) -> TpiParams:
        return TpiParams(
            eta=self.tpi.eta,
            alpha2=self.tpi.alpha2,
            beta=self.tpi.beta,
            tau_c=self.tpi.tau_c_ps,
            emitter=self.emitter(),
            sigma_j=self.sigma_j(),
            phi=self.tpi.phi_rad if phi is None else phi,
        )

    def detector_spec(self, channel: Channel) -> DetectorSpec:
        key = "d1" if channel == Channel.D1 else "d2"
        if key not in self.detectors:
            raise ScenarioError(f"scenario has no detector block {key!r}")
        return self.detectors[key].spec()


def _atomic_write_text(path, text: str):
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write(text)
    os.replace(tmp, path)


def _atomic_write_bytes(path, data: bytes):
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def load_scenario(path) -> Scenario:
    """Load and fully validate a scenario JSON file.

    The diagnostic names the first offending field; unknown fields are
    rejected.
    """
    path = os.fspath(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = f.read()
    except OSError as exc:
        raise ScenarioError(f"{path}: cannot read scenario: {exc}") from exc
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: not valid JSON: {exc}") from exc
    try:
        return Scenario.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        loc = ".".join(str(part) for part in first["loc"]) or "<root>"
        raise ScenarioError(f"{path}: {loc}: {first['msg']}") from exc


def save_scenario(path, scenario: Scenario):
    _atomic_write_text(path, scenario.model_dump_json(indent=2) + "\n")


def bundled_scenario_path(name: str = "oband_default") -> Path:
    """Path of a scenario shipped with the package."""
    root = resources.files("homlab") / "scenarios" / f"{name}.json"
    path = Path(str(root))
    if not path.is_file():
        raise ScenarioError(f"no bundled scenario named {name!r}")
    return path


def write_timestamps_csv(path, series_list):
    """Write detection series as CSV rows `time_ps,channel`, one channel
    block after the other, each sorted in time."""
    lines = ["time_ps,channel"]
    for series in series_list:
        name = series.channel.name
        lines.extend(f"{int(t)},{name}" for t in series.times_ps)
    _atomic_write_text(path, "\n".join(lines) + "\n")


def read_timestamps_csv(path) -> list[DetectionSeries]:
    path = os.fspath(path)
    by_channel: dict[Channel, list[int]] = {}
    try:
        f = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise FileFormatError(f"{path}: cannot read: {exc}") from exc
    with f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["time_ps", "channel"]:
            raise FileFormatError(
                f"{path}: expected header 'time_ps,channel' (got {header})"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise FileFormatError(f"{path}:{lineno}: expected 2 fields")
            try:
                t = int(row[0])
                ch = Channel[row[1].strip()]
            except (ValueError, KeyError) as exc:
                raise FileFormatError(
                    f"{path}:{lineno}: bad record {row!r}"
                ) from exc
            by_channel.setdefault(ch, []).append(t)
    return _series_from_groups(path, by_channel)


def _series_from_groups(path, by_channel) -> list[DetectionSeries]:
    out = []
    for ch in sorted(by_channel):
        times = np.asarray(by_channel[ch], dtype=np.int64)
        if times.size and np.any(np.diff(times) < 0):
            raise FileFormatError(
                f"{path}: channel {ch.name} timestamps are not sorted"
            )
        out.append(DetectionSeries(channel=ch, times_ps=times))
    return out


def write_timestamps_binary(path, series_list):
    """Binary timestamp dump: magic TPI1, then 9-byte records of
    little-endian int64 picoseconds plus uint8 channel."""
    chunks = [TIMESTAMP_MAGIC]
    for series in series_list:
        rec = np.empty(series.times_ps.size, dtype=_RECORD_DTYPE)
        rec["time_ps"] = series.times_ps
        rec["channel"] = int(series.channel)
        chunks.append(rec.tobytes())
    _atomic_write_bytes(path, b"".join(chunks))


def read_timestamps_binary(path) -> list[DetectionSeries]:
    path = os.fspath(path)
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as exc:
        raise FileFormatError(f"{path}: cannot read: {exc}") from exc
    if blob[:4] != TIMESTAMP_MAGIC:
        raise FileFormatError(
            f"{path}: bad magic {blob[:4]!r}, expected {TIMESTAMP_MAGIC!r}"
        )
    body = blob[4:]
    if len(body) % _RECORD_DTYPE.itemsize:
        raise FileFormatError(
            f"{path}: truncated file: {len(body)} payload bytes is not a "
            f"whole number of {_RECORD_DTYPE.itemsize}-byte records"
        )
    rec = np.frombuffer(body, dtype=_RECORD_DTYPE)
    by_channel: dict[Channel, list[int]] = {}
    for ch_val in np.unique(rec["channel"]):
        try:
            ch = Channel(int(ch_val))
        except ValueError as exc:
            raise FileFormatError(
                f"{path}: unknown channel tag {int(ch_val)}"
            ) from exc
        by_channel[ch] = rec["time_ps"][rec["channel"] == ch_val]
    return _series_from_groups(path, by_channel)


def write_histogram(path, h: CorrelationHistogram):
    doc = {
        "bin_width_ps": h.bin_width_ps,
        "tau_min_ps": h.tau_min_ps,
        "counts": [int(c) for c in h.counts],
        "overflow": h.overflow,
        "span_ps": h.span_ps,
        "n_start": h.n_start,
        "n_stop": h.n_stop,
        "seed_list": list(h.seed_list),
    }
    _atomic_write_text(path, json.dumps(doc, indent=1) + "\n")


def read_histogram(path) -> CorrelationHistogram:
    path = os.fspath(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except OSError as exc:
        raise FileFormatError(f"{path}: cannot read: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise FileFormatError(f"{path}: histogram document must be an object")
    missing = [k for k in _HISTOGRAM_FIELDS if k not in data]
    if missing:
        raise FileFormatError(f"{path}: missing fields {missing}")
    unknown = [k for k in data if k not in _HISTOGRAM_FIELDS]
    if unknown:
        raise FileFormatError(f"{path}: unknown fields {unknown}")
    try:
        return CorrelationHistogram(
            bin_width_ps=data["bin_width_ps"],
            tau_min_ps=data["tau_min_ps"],
            counts=np.asarray(data["counts"], dtype=np.int64),
            overflow=data["overflow"],
            span_ps=data["span_ps"],
            n_start=data["n_start"],
            n_stop=data["n_stop"],
            seed_list=data["seed_list"],
        )
    except (TypeError, ValueError, HomlabError) as exc:
        raise FileFormatError(f"{path}: invalid histogram: {exc}") from exc


def write_json(path, obj):
    """Atomic JSON dump used for small report-style artifacts."""
    _atomic_write_text(path, json.dumps(obj, indent=1) + "\n")


def write_report(path, result: FitResult):
    """Serialize a fit result as a JSON report (write-only artifact)."""
    doc = {
        "params": {k: float(v) for k, v in result.params.items()},
        "std_errors": {k: float(v) for k, v in result.std_errors.items()},
        "free_params": list(result.free_params),
        "covariance": [float(v) for v in np.asarray(result.covariance).ravel()],
        "chi2": float(result.chi2),
        "dof": int(result.dof),
        "converged": bool(result.converged),
        "n_iterations": int(result.n_iterations),
        "settings": result.settings,
    }
    _atomic_write_text(path, json.dumps(doc, indent=1) + "\n")


def write_curve_csv(path, tau_ps, values, sigma=None):
    """Curve table with header `tau_ps,value,sigma` (sigma 0 when absent)."""
    tau_ps = np.asarray(tau_ps, dtype=float)
    values = np.asarray(values, dtype=float)
    sigma = (
        np.zeros_like(values) if sigma is None else np.asarray(sigma, dtype=float)
    )
    if not tau_ps.shape == values.shape == sigma.shape:
        raise FileFormatError("curve columns must have equal length")
    lines = ["tau_ps,value,sigma"]
    lines.extend(
        f"{t:.6f},{v:.10g},{s:.10g}" for t, v, s in zip(tau_ps, values, sigma)
    )
    _atomic_write_text(path, "\n".join(lines) + "\n")


def read_curve_csv(path):
    return _read_three_column(path, ["tau_ps", "value", "sigma"])


def read_points_csv(path):
    """Visibility points for the coherence-decay fit: rows of
    `delay_ps,visibility,sigma`."""
    return _read_three_column(path, ["delay_ps", "visibility", "sigma"])


def _read_three_column(path, expected_header):
    path = os.fspath(path)
    rows = []
    try:
        f = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise FileFormatError(f"{path}: cannot read: {exc}") from exc
    with f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != expected_header:
            raise FileFormatError(
                f"{path}: expected header {','.join(expected_header)!r} "
                f"(got {header})"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise FileFormatError(f"{path}:{lineno}: expected 3 fields")
            try:
                rows.append([float(x) for x in row])
            except ValueError as exc:
                raise FileFormatError(
                    f"{path}:{lineno}: bad numeric row {row!r}"
                ) from exc
    arr = np.asarray(rows, dtype=float).reshape(-1, 3)
    return arr[:, 0], arr[:, 1], arr[:, 2]
