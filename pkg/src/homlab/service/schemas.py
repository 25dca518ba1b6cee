"""Request and response bodies of the HTTP service.

The histogram body uses exactly the same field names as the histogram
JSON file format, so files written by the CLI can be embedded in
requests verbatim.
"""

from __future__ import annotations

from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from homlab.estimate import FitResult
from homlab.io import Scenario
from homlab.simulate import CorrelationHistogram


class HistogramDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")

    bin_width_ps: int
    tau_min_ps: float
    counts: list[int]
    overflow: int = 0
    span_ps: int = 0
    n_start: int = 0
    n_stop: int = 0
    seed_list: list[int] = Field(default_factory=list)

    @classmethod
    def from_histogram(cls, h: CorrelationHistogram) -> "HistogramDoc":
        return cls(
            bin_width_ps=h.bin_width_ps,
            tau_min_ps=h.tau_min_ps,
            counts=[int(c) for c in h.counts],
            overflow=h.overflow,
            span_ps=h.span_ps,
            n_start=h.n_start,
            n_stop=h.n_stop,
            seed_list=[int(s) for s in h.seed_list],
        )

    def to_histogram(self) -> CorrelationHistogram:
        return CorrelationHistogram(
            bin_width_ps=self.bin_width_ps,
            tau_min_ps=self.tau_min_ps,
            counts=np.asarray(self.counts, dtype=np.int64),
            overflow=self.overflow,
            span_ps=self.span_ps,
            n_start=self.n_start,
            n_stop=self.n_stop,
            seed_list=list(self.seed_list),
        )


class FitReport(BaseModel):
    model_config = ConfigDict(extra="forbid")

    params: dict[str, float]
    std_errors: dict[str, float]
    free_params: list[str]
    covariance: list[float]
    chi2: float
    dof: int
    converged: bool
    n_iterations: int
    settings: dict

    @classmethod
    def from_result(cls, r: FitResult) -> "FitReport":
        return cls(
            params={k: float(v) for k, v in r.params.items()},
            std_errors={k: float(v) for k, v in r.std_errors.items()},
            free_params=list(r.free_params),
            covariance=[float(v) for v in np.asarray(r.covariance).ravel()],
            chi2=float(r.chi2),
            dof=int(r.dof),
            converged=bool(r.converged),
            n_iterations=int(r.n_iterations),
            settings=r.settings,
        )


class HealthResponse(BaseModel):
    status: str
    version: str


class CurveRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    scenario: Scenario
    phi: Literal["par", "perp"] = "par"


class CurveResponse(BaseModel):
    tau_ps: list[float]
    value: list[float]


class BandwidthResponse(BaseModel):
    tau_c_ps: float
    bandwidth_uev: float


class RatioRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    scenario: Scenario
    r_lo: float = 0.05
    r_hi: float = 2.0


class RatioResponse(BaseModel):
    r_star: float


class SimulateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    scenario: Scenario
    n_pairs: int = Field(ge=1)
    seed: Optional[int] = Field(None, ge=0, lt=2**64)
    threads: Optional[int] = Field(None, ge=1)


class SimulateResponse(BaseModel):
    par: HistogramDoc
    perp: HistogramDoc


class FitRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    scenario: Scenario
    par: HistogramDoc
    perp: HistogramDoc
    free: Optional[list[str]] = None
    freeze: list[str] = Field(default_factory=list)
    max_iterations: int = Field(500, ge=1)


class VisibilityRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    scenario: Scenario
    par: HistogramDoc
    perp: HistogramDoc


class VisibilityResponse(BaseModel):
    tau_ps: list[float]
    v: list[float]
    sigma_v: list[float]
    n_excluded: int
    excluded_tau_ps: list[float]
    peak_tau_ps: float
    peak_v: float
    peak_sigma_v: float


class CoherencePoint(BaseModel):
    model_config = ConfigDict(extra="forbid")

    delay_ps: float
    visibility: float
    sigma: float = Field(gt=0)


class CoherenceFitRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    points: list[CoherencePoint]
    fix_amplitude: bool = False
