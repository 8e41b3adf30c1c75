"""Thin command-line client for the HTTP service.

By default the service runs in-process (ASGI transport), so batch usage
needs no daemon; --server targets a remote instance instead.  The CLI only
posts configs and renders returned records to files; no quantity is
computed in this layer.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path


def _set_thread_env(threads: int) -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, str(threads))


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attractor-dim",
        description=(
            "Simulate reaction-diffusion dynamics on a box, estimate the "
            "invariant-set dimension from tangent-volume contraction, and "
            "evaluate the analytic dimension bounds."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_commands = ("simulate", "spectrum", "bound", "dim-estimate", "verify")
    for name in run_commands:
        p = sub.add_parser(name, help=f"run the {name} pipeline")
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=0, help="solver RNG seed")
        p.add_argument("--threads", type=int, default=0,
                       help="BLAS/OpenMP thread cap (0 = leave unset)")
        p.add_argument("--server", default=None,
                       help="service base URL (default: in-process)")

    p = sub.add_parser("report", help="merge run records into a comparison table")
    p.add_argument("--records", nargs="+", required=True,
                   help="run.json files to merge")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--server", default=None, help="service base URL")

    p = sub.add_parser("serve", help="launch the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8711)

    return parser


def _client(server: str | None):
    import httpx

    if server:
        return httpx.Client(base_url=server.rstrip("/"), timeout=3600.0)
    # in-process transport: same HTTP surface, no daemon required
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from .service.app import create_app

    return TestClient(create_app())


def _run_command(args) -> int:
    config_path = Path(args.config)
    if not config_path.exists():
        print(f"error: config file not found: {config_path}", file=sys.stderr)
        return 1
    config_text = config_path.read_text()
    with _client(args.server) as client:
        resp = client.post(
            f"/v1/run/{args.command}",
            json={"config_text": config_text, "seed": args.seed},
        )
        if resp.status_code != 200:
            print(f"error: service returned HTTP {resp.status_code}: {resp.text}",
                  file=sys.stderr)
            return 3
        record = resp.json()

    outdir = args.out
    if outdir is None:
        from .errors import EXIT_USAGE

        if record["exit_code"] == EXIT_USAGE:
            outdir = None  # nothing worth writing for a rejected config
        else:
            outdir = _default_outdir(config_text)
    if outdir is not None and record.get("status") != "config-error":
        from .runner import materialize

        written = materialize(record, outdir)
        for path in written:
            print(f"wrote {path}")
    _print_summary(record)
    return int(record["exit_code"])


def _default_outdir(config_text: str) -> str:
    from .config import parse_config
    from .errors import ConfigError

    try:
        return parse_config(config_text).output.directory
    except ConfigError:
        return "out"


def _print_summary(record: dict) -> None:
    status = record.get("status")
    print(f"status: {status} (exit {record.get('exit_code')})")
    if record.get("error"):
        print(f"detail: {record['error']}")
    outputs = record.get("outputs", {})
    if "bound_report" in outputs:
        br = outputs["bound_report"]
        print(
            "bound: lambda1={lambda1:.6g} n_count={n_count} D={d_const:.6g} "
            "d1={d1:.6g} d2={d2:.6g} d_final={d_final}".format(**br)
        )
    if "dimension" in outputs:
        dim = outputs["dimension"]
        if dim.get("d_certified") is not None:
            print(f"dimension: contraction certified at d={dim['d_certified']}")
        else:
            print(f"dimension: inconclusive up to d_max={dim['d_max']}")
    if "checks" in outputs:
        for chk in outputs["checks"]:
            mark = "PASS" if chk["passed"] else "FAIL"
            print(f"  [{mark}] {chk['name']}: worst={chk['worst']:.3e} "
                  f"tol={chk['tolerance']:.1e}")
    if "eigenvalues" in outputs:
        vals = ", ".join(f"{v:.6g}" for v in outputs["eigenvalues"][:6])
        print(f"eigenvalues: {vals}")


def _report_command(args) -> int:
    records = []
    for path in args.records:
        p = Path(path)
        if not p.exists():
            print(f"error: record not found: {p}", file=sys.stderr)
            return 1
        records.append(json.loads(p.read_text()))
    with _client(args.server) as client:
        resp = client.post("/v1/report", json={"records": records})
        if resp.status_code != 200:
            print(f"error: service returned HTTP {resp.status_code}: {resp.text}",
                  file=sys.stderr)
            return 3
        rows = resp.json()["rows"]
    from .runner import materialize_report

    for path in materialize_report(rows, args.out):
        print(f"wrote {path}")
    for row in rows:
        print(
            f"{row['config_hash']}: estimate={row['d_estimate']} "
            f"bound={row['d_final']} statuses={row['statuses']}"
            + ("" if row["grid_compatible"] else " [grid mismatch]")
        )
    return 0


def _serve_command(args) -> int:
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    if getattr(args, "threads", 0):
        _set_thread_env(args.threads)
    if args.command == "serve":
        return _serve_command(args)
    if args.command == "report":
        return _report_command(args)
    return _run_command(args)


if __name__ == "__main__":
    sys.exit(main())
