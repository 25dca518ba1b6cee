"""FastAPI application exposing the toolkit over HTTP.

Domain errors surface as structured JSON: invalid-input kinds map to
422, resource/regime and convergence kinds to 409, always with a body
``{"detail": {"kind": ..., "message": ...}}`` so clients can branch on
the kind without parsing prose.
"""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, Query
from fastapi.responses import JSONResponse

import homlab
from homlab import workflows
from homlab.errors import (
    CapacityError,
    FileFormatError,
    GridError,
    HomlabError,
    InvalidParamsError,
    NoInteriorMaximumError,
    NonConvergenceError,
    RegimeError,
    ScenarioError,
    SingularNormalMatrixError,
)
from homlab.model import coherence_to_bandwidth
from homlab.service import schemas

# Ordered subclass-first so isinstance resolution picks the most
# specific kind.
_ERROR_KINDS = (
    (SingularNormalMatrixError, "singular-normal-matrix", 409),
    (NoInteriorMaximumError, "no-interior-maximum", 409),
    (NonConvergenceError, "non-convergence", 409),
    (RegimeError, "regime", 409),
    (CapacityError, "capacity", 409),
    (ScenarioError, "scenario", 422),
    (GridError, "grid", 422),
    (FileFormatError, "file-format", 422),
    (InvalidParamsError, "invalid-params", 422),
)


def classify_error(exc: HomlabError) -> tuple[str, int]:
    for etype, kind, status in _ERROR_KINDS:
        if isinstance(exc, etype):
            return kind, status
    return "invalid-params", 422


def create_app() -> FastAPI:
    app = FastAPI(title="homlab", version=homlab.__version__)

    @app.exception_handler(HomlabError)
    async def _domain_error(request, exc: HomlabError):
        kind, status = classify_error(exc)
        return JSONResponse(
            status_code=status,
            content={"detail": {"kind": kind, "message": str(exc)}},
        )

    @app.get("/health", response_model=schemas.HealthResponse)
    async def health():
        return schemas.HealthResponse(status="ok", version=homlab.__version__)

    @app.post("/model/curve", response_model=schemas.CurveResponse)
    async def model_curve(req: schemas.CurveRequest):
        phi = workflows.PHI_PAR if req.phi == "par" else workflows.PHI_PERP
        tau, values = workflows.model_curve_for(req.scenario, phi)
        return schemas.CurveResponse(
            tau_ps=[float(t) for t in tau], value=[float(v) for v in values]
        )

    @app.get("/model/bandwidth", response_model=schemas.BandwidthResponse)
    async def bandwidth(tau_c_ps: float = Query(gt=0)):
        return schemas.BandwidthResponse(
            tau_c_ps=tau_c_ps, bandwidth_uev=coherence_to_bandwidth(tau_c_ps)
        )

    @app.post("/model/optimal-ratio", response_model=schemas.RatioResponse)
    async def optimal_ratio(req: schemas.RatioRequest):
        r_star = workflows.optimize_ratio(req.scenario, (req.r_lo, req.r_hi))
        return schemas.RatioResponse(r_star=r_star)

    @app.post("/simulate/coincidences", response_model=schemas.SimulateResponse)
    async def simulate(req: schemas.SimulateRequest):
        h_par, h_perp = workflows.simulate_histograms(
            req.scenario, req.n_pairs, seed=req.seed, threads=req.threads
        )
        return schemas.SimulateResponse(
            par=schemas.HistogramDoc.from_histogram(h_par),
            perp=schemas.HistogramDoc.from_histogram(h_perp),
        )

    @app.post("/estimate/fit", response_model=schemas.FitReport)
    async def fit(req: schemas.FitRequest):
        result = workflows.fit_histograms(
            req.scenario,
            req.par.to_histogram(),
            req.perp.to_histogram(),
            free=req.free,
            freeze=req.freeze,
            max_iterations=req.max_iterations,
        )
        return schemas.FitReport.from_result(result)

    @app.post("/estimate/visibility", response_model=schemas.VisibilityResponse)
    async def visibility(req: schemas.VisibilityRequest):
        curve = workflows.visibility_histograms(
            req.scenario, req.par.to_histogram(), req.perp.to_histogram()
        )
        if curve.v.size == 0:
            raise InvalidParamsError("no usable visibility bins")
        peak = int(np.argmax(curve.v))
        return schemas.VisibilityResponse(
            tau_ps=[float(t) for t in curve.tau_centers],
            v=[float(x) for x in curve.v],
            sigma_v=[float(x) for x in curve.sigma_v],
            n_excluded=curve.n_excluded,
            excluded_tau_ps=curve.excluded_tau_ps,
            peak_tau_ps=float(curve.tau_centers[peak]),
            peak_v=float(curve.v[peak]),
            peak_sigma_v=float(curve.sigma_v[peak]),
        )

    @app.post("/estimate/coherence-fit", response_model=schemas.FitReport)
    async def coherence_fit(req: schemas.CoherenceFitRequest):
        points = [
            (pt.delay_ps, pt.visibility, pt.sigma) for pt in req.points
        ]
        result = workflows.coherence_fit(
            points, fix_amplitude=req.fix_amplitude
        )
        return schemas.FitReport.from_result(result)

    return app


app = create_app()
