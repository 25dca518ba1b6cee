"""Command-line frontend; a thin client of the HTTP service.

Commands run against an in-process instance of the service by default
(no network involved); ``--server URL`` points them at a running one
instead.  Artifacts are written only after the request succeeds, so a
nonzero exit never leaves a partial primary output behind.

Exit codes: 0 success, 1 invalid input, 2 runtime/environment failure,
3 fit or search did not converge.

Units throughout: times in picoseconds (ps), rates in counts per
second, energies in micro-electronvolt (micro-eV).
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys

import httpx
import numpy as np

from homlab import io
from homlab.errors import HomlabError
from homlab.service.app import classify_error, create_app
from homlab.simulate import CorrelationHistogram

_EXIT_BY_KIND = {
    "scenario": 1,
    "invalid-params": 1,
    "grid": 1,
    "file-format": 1,
    "regime": 2,
    "capacity": 2,
    "non-convergence": 3,
    "singular-normal-matrix": 3,
    "no-interior-maximum": 3,
}


class _CommandError(Exception):
    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; bad flags are validation
    # failures in this tool's taxonomy, so remap to 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit")
    return value


class ServiceClient:
    """One-shot HTTP calls, in-process unless a server URL is given."""

    def __init__(self, server: str | None):
        self._server = server

    def request(self, method: str, path: str, payload=None, params=None):
        async def go():
            if self._server is None:
                transport = httpx.ASGITransport(app=create_app())
                client = httpx.AsyncClient(
                    transport=transport,
                    base_url="http://homlab.internal",
                    timeout=None,
                )
            else:
                client = httpx.AsyncClient(
                    base_url=self._server, timeout=600.0
                )
            async with client:
                return await client.request(
                    method, path, json=payload, params=params
                )

        try:
            resp = asyncio.run(go())
        except httpx.HTTPError as exc:
            raise _CommandError(f"service unreachable: {exc}", 2) from exc
        if resp.status_code == 200:
            return resp.json()
        _raise_for_response(resp)


def _raise_for_response(resp):
    try:
        detail = resp.json().get("detail")
    except (ValueError, AttributeError):
        detail = None
    if isinstance(detail, dict) and "kind" in detail:
        kind = detail["kind"]
        raise _CommandError(
            f"error ({kind}): {detail.get('message', '')}",
            _EXIT_BY_KIND.get(kind, 2),
        )
    if resp.status_code == 422 and isinstance(detail, list) and detail:
        first = detail[0]
        loc = ".".join(str(p) for p in first.get("loc", []) if p != "body")
        raise _CommandError(
            f"invalid request: {loc}: {first.get('msg', 'rejected')}", 1
        )
    raise _CommandError(f"service error: HTTP {resp.status_code}", 2)


def _say(args, message: str):
    if not args.quiet:
        print(message)


def _load_scenario(args) -> io.Scenario:
    path = args.scenario or io.bundled_scenario_path()
    return io.load_scenario(path)


def _scenario_payload(scenario: io.Scenario) -> dict:
    return scenario.model_dump(mode="json")


def _hist_from_doc(doc: dict) -> CorrelationHistogram:
    return CorrelationHistogram(
        bin_width_ps=doc["bin_width_ps"],
        tau_min_ps=doc["tau_min_ps"],
        counts=np.asarray(doc["counts"], dtype=np.int64),
        overflow=doc["overflow"],
        span_ps=doc["span_ps"],
        n_start=doc["n_start"],
        n_stop=doc["n_stop"],
        seed_list=doc["seed_list"],
    )


def _doc_from_file(path) -> dict:
    h = io.read_histogram(path)
    return {
        "bin_width_ps": h.bin_width_ps,
        "tau_min_ps": h.tau_min_ps,
        "counts": [int(c) for c in h.counts],
        "overflow": h.overflow,
        "span_ps": h.span_ps,
        "n_start": h.n_start,
        "n_stop": h.n_stop,
        "seed_list": [int(s) for s in h.seed_list],
    }


def _split_names(values) -> list[str]:
    names = []
    for chunk in values or []:
        names.extend(n.strip() for n in chunk.split(",") if n.strip())
    return names


def cmd_model_curve(args) -> int:
    scenario = _load_scenario(args)
    client = ServiceClient(args.server)
    resp = client.request(
        "POST",
        "/model/curve",
        payload={"scenario": _scenario_payload(scenario), "phi": args.phi},
    )
    out = args.out or "model_curve.csv"
    io.write_curve_csv(out, resp["tau_ps"], resp["value"])
    center = resp["value"][len(resp["value"]) // 2]
    _say(
        args,
        f"wrote {out}: {len(resp['value'])} bins, {args.phi} curve, "
        f"g2(0) = {center:.4f}",
    )
    return 0


def cmd_simulate(args) -> int:
    scenario = _load_scenario(args)
    client = ServiceClient(args.server)
    payload = {
        "scenario": _scenario_payload(scenario),
        "n_pairs": args.pairs,
    }
    if args.seed is not None:
        payload["seed"] = args.seed
    if args.threads is not None:
        payload["threads"] = args.threads
    resp = client.request("POST", "/simulate/coincidences", payload=payload)
    io.write_histogram(args.out_par, _hist_from_doc(resp["par"]))
    io.write_histogram(args.out_perp, _hist_from_doc(resp["perp"]))
    seed = resp["par"]["seed_list"]
    _say(
        args,
        f"wrote {args.out_par} and {args.out_perp}: {args.pairs} pairs per "
        f"polarization (seed {seed[0] if seed else scenario.seed})",
    )
    return 0


def cmd_fit(args) -> int:
    scenario = _load_scenario(args)
    client = ServiceClient(args.server)
    payload = {
        "scenario": _scenario_payload(scenario),
        "par": _doc_from_file(args.par),
        "perp": _doc_from_file(args.perp),
        "freeze": _split_names(args.freeze),
        "max_iterations": args.max_iterations,
    }
    free = _split_names(args.free)
    if free:
        payload["free"] = free
    report = client.request("POST", "/estimate/fit", payload=payload)
    out = args.report or args.out or "fit_report.json"
    io.write_json(out, report)
    if not args.quiet:
        _print_fit_table(report)
        print(f"wrote {out}")
    return 0


def _print_fit_table(report: dict):
    free = set(report["free_params"])
    print(f"{'parameter':<12}{'value':>14}{'std_error':>14}")
    for name, value in report["params"].items():
        err = report["std_errors"].get(name, 0.0)
        mark = "" if name in free else "   (frozen)"
        print(f"{name:<12}{value:>14.6g}{err:>14.3g}{mark}")
    dof = report["dof"]
    reduced = report["chi2"] / dof if dof > 0 else float("nan")
    print(
        f"chi2 = {report['chi2']:.6g}, dof = {dof}, "
        f"chi2/dof = {reduced:.4g}, iterations = {report['n_iterations']}"
    )


def cmd_visibility(args) -> int:
    scenario = _load_scenario(args)
    client = ServiceClient(args.server)
    resp = client.request(
        "POST",
        "/estimate/visibility",
        payload={
            "scenario": _scenario_payload(scenario),
            "par": _doc_from_file(args.par),
            "perp": _doc_from_file(args.perp),
        },
    )
    out = args.out or "visibility.csv"
    io.write_curve_csv(out, resp["tau_ps"], resp["v"], resp["sigma_v"])
    _say(
        args,
        f"wrote {out}: peak visibility {resp['peak_v']:.4f} +/- "
        f"{resp['peak_sigma_v']:.4f} at tau = {resp['peak_tau_ps']:.0f} ps"
        + (
            f" ({resp['n_excluded']} bins excluded)"
            if resp["n_excluded"]
            else ""
        ),
    )
    return 0


def cmd_optimize_ratio(args) -> int:
    scenario = _load_scenario(args)
    client = ServiceClient(args.server)
    resp = client.request(
        "POST",
        "/model/optimal-ratio",
        payload={
            "scenario": _scenario_payload(scenario),
            "r_lo": args.r_lo,
            "r_hi": args.r_hi,
        },
    )
    if args.out:
        io.write_json(
            args.out,
            {"r_star": resp["r_star"], "r_lo": args.r_lo, "r_hi": args.r_hi},
        )
    _say(
        args,
        f"optimal laser/emitter intensity ratio r* = {resp['r_star']:.4f} "
        f"(searched [{args.r_lo:g}, {args.r_hi:g}])",
    )
    return 0


def cmd_coherence_fit(args) -> int:
    delay, vis, sigma = io.read_points_csv(args.points)
    client = ServiceClient(args.server)
    report = client.request(
        "POST",
        "/estimate/coherence-fit",
        payload={
            "points": [
                {"delay_ps": float(d), "visibility": float(v), "sigma": float(s)}
                for d, v, s in zip(delay, vis, sigma)
            ],
            "fix_amplitude": args.fix_amplitude,
        },
    )
    out = args.report or args.out or "coherence_fit.json"
    io.write_json(out, report)
    tau = report["params"]["tau_c_ps"]
    err = report["std_errors"]["tau_c_ps"]
    _say(
        args,
        f"wrote {out}: tau_c = {tau:.2f} +/- {err:.2f} ps "
        f"(chi2 = {report['chi2']:.4g}, dof = {report['dof']})",
    )
    return 0


def cmd_bandwidth(args) -> int:
    tau_c = args.tau_c
    if tau_c is None:
        tau_c = _load_scenario(args).tpi.tau_c_ps
    client = ServiceClient(args.server)
    resp = client.request(
        "GET", "/model/bandwidth", params={"tau_c_ps": tau_c}
    )
    if args.out:
        io.write_json(args.out, resp)
    _say(
        args,
        f"bandwidth: {resp['bandwidth_uev']:.3f} micro-eV "
        f"(tau_c = {resp['tau_c_ps']:g} ps)",
    )
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run(
        "homlab.service.app:app",
        host=args.host,
        port=args.port,
        log_level="warning" if args.quiet else "info",
    )
    return 0


def _add_common(sp):
    sp.add_argument(
        "--scenario",
        metavar="PATH",
        default=argparse.SUPPRESS,
        help="scenario JSON file (default: bundled oband_default scenario)",
    )
    sp.add_argument(
        "--seed",
        type=_u64,
        metavar="U64",
        default=argparse.SUPPRESS,
        help="override the scenario RNG seed (unsigned 64-bit integer)",
    )
    sp.add_argument(
        "--out",
        metavar="PATH",
        default=argparse.SUPPRESS,
        help="output artifact path (command-specific default)",
    )
    sp.add_argument(
        "--quiet",
        action="store_true",
        default=argparse.SUPPRESS,
        help="suppress summary output on stdout",
    )
    sp.add_argument(
        "--server",
        metavar="URL",
        default=argparse.SUPPRESS,
        help="base URL of a running service (default: run in-process)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="homlab",
        description=(
            "Simulation and estimation toolkit for two-photon interference "
            "between a single-photon emitter and a weak laser. Times are in "
            "picoseconds, rates in counts/s, energies in micro-eV."
        ),
    )
    parser.add_argument("--scenario", metavar="PATH", default=None)
    parser.add_argument("--seed", type=_u64, metavar="U64", default=None)
    parser.add_argument("--out", metavar="PATH", default=None)
    parser.add_argument("--quiet", action="store_true", default=False)
    parser.add_argument("--server", metavar="URL", default=None)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser(
        "model-curve",
        help="write the smeared analytic correlation curve as CSV",
        description=(
            "Evaluate the smeared correlation model on the scenario's bin "
            "grid and write tau_ps,value,sigma rows."
        ),
    )
    _add_common(p)
    p.add_argument(
        "--phi",
        choices=("par", "perp"),
        default="par",
        help="polarization branch: par (angle 0) or perp (angle pi/2)",
    )
    p.set_defaults(func=cmd_model_curve)

    p = sub.add_parser(
        "simulate",
        help="sample coincidence histograms for both polarizations",
        description=(
            "Draw pair delays from the smeared model for the parallel and "
            "crossed polarization settings and write two histogram JSON "
            "files. Deterministic per seed."
        ),
    )
    _add_common(p)
    p.add_argument(
        "--pairs",
        type=int,
        required=True,
        metavar="N",
        help="accepted coincidence pairs per polarization (>= 1)",
    )
    p.add_argument(
        "--out-par",
        metavar="PATH",
        default="hist_par.json",
        help="output path for the parallel-polarization histogram JSON",
    )
    p.add_argument(
        "--out-perp",
        metavar="PATH",
        default="hist_perp.json",
        help="output path for the crossed-polarization histogram JSON",
    )
    p.add_argument(
        "--threads",
        type=int,
        metavar="N",
        default=None,
        help="worker threads (capped by HOMLAB_THREADS; default 1)",
    )
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser(
        "fit",
        help="fit the correlation model to a histogram pair",
        description=(
            "Normalize both histograms, fit the smeared model to the "
            "parallel and crossed curves simultaneously, and write a JSON "
            "report. Initial values come from the scenario."
        ),
    )
    _add_common(p)
    p.add_argument(
        "--par", required=True, metavar="PATH", help="parallel histogram JSON"
    )
    p.add_argument(
        "--perp", required=True, metavar="PATH", help="crossed histogram JSON"
    )
    p.add_argument(
        "--free",
        action="append",
        metavar="NAMES",
        help=(
            "comma-separated parameters to fit (default: "
            "alpha2,g0,tau_r,sigma_j); times in ps, angles in rad"
        ),
    )
    p.add_argument(
        "--freeze",
        action="append",
        metavar="NAMES",
        help="comma-separated parameters to remove from the free set",
    )
    p.add_argument(
        "--max-iterations",
        type=int,
        default=500,
        metavar="N",
        help="iteration budget of the damped least-squares loop",
    )
    p.add_argument(
        "--report",
        metavar="PATH",
        default=None,
        help="fit report JSON path (default fit_report.json)",
    )
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser(
        "visibility",
        help="per-bin visibility between two histograms",
        description=(
            "Normalize both histograms and write the per-bin visibility "
            "curve with propagated errors as tau_ps,value,sigma CSV."
        ),
    )
    _add_common(p)
    p.add_argument(
        "--par", required=True, metavar="PATH", help="parallel histogram JSON"
    )
    p.add_argument(
        "--perp", required=True, metavar="PATH", help="crossed histogram JSON"
    )
    p.set_defaults(func=cmd_visibility)

    p = sub.add_parser(
        "optimize-ratio",
        help="laser/emitter intensity ratio maximizing zero-delay visibility",
        description=(
            "Search the dimensionless laser/emitter intensity ratio that "
            "maximizes the smeared zero-delay visibility for the scenario's "
            "emitter, coherence time, jitter and background."
        ),
    )
    _add_common(p)
    p.add_argument(
        "--r-lo",
        type=float,
        default=0.05,
        metavar="R",
        help="lower bracket of the dimensionless intensity ratio",
    )
    p.add_argument(
        "--r-hi",
        type=float,
        default=2.0,
        metavar="R",
        help="upper bracket of the dimensionless intensity ratio",
    )
    p.set_defaults(func=cmd_optimize_ratio)

    p = sub.add_parser(
        "coherence-fit",
        help="fit an exponential decay to visibility-vs-delay points",
        description=(
            "Weighted fit of amplitude * exp(-|delay|/tau_c) to CSV rows "
            "delay_ps,visibility,sigma; writes a JSON report with tau_c in ps."
        ),
    )
    _add_common(p)
    p.add_argument(
        "--points",
        required=True,
        metavar="PATH",
        help="CSV file with header delay_ps,visibility,sigma",
    )
    p.add_argument(
        "--fix-amplitude",
        action="store_true",
        help="pin the amplitude to 1 and fit the decay time alone",
    )
    p.add_argument(
        "--report",
        metavar="PATH",
        default=None,
        help="report JSON path (default coherence_fit.json)",
    )
    p.set_defaults(func=cmd_coherence_fit)

    p = sub.add_parser(
        "bandwidth",
        help="Fourier-limited bandwidth for a coherence time",
        description=(
            "Convert a coherence time in ps to the Fourier-limited spectral "
            "bandwidth in micro-eV."
        ),
    )
    _add_common(p)
    p.add_argument(
        "--tau-c",
        type=float,
        default=None,
        metavar="PS",
        help="coherence time in ps (default: the scenario's value)",
    )
    p.set_defaults(func=cmd_bandwidth)

    p = sub.add_parser(
        "serve",
        help="run the HTTP service",
        description="Start the HTTP service with uvicorn.",
    )
    _add_common(p)
    p.add_argument("--host", default="127.0.0.1", help="bind address")
    p.add_argument("--port", type=int, default=8000, help="TCP port")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "func", None) is None:
        parser.print_help()
        return 1
    try:
        return args.func(args)
    except _CommandError as exc:
        print(str(exc), file=sys.stderr)
        return exc.exit_code
    except HomlabError as exc:
        kind, _ = classify_error(exc)
        print(f"error ({kind}): {exc}", file=sys.stderr)
        return _EXIT_BY_KIND.get(kind, 1)
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
