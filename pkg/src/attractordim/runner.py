"""Command orchestration: build the problem from a validated config, run one
of the six commands, and materialize reports, CSV series and SVG plots.

Every number emitted here traces to a module output; this layer only
sequences calls and formats results.
"""

from __future__ import annotations

import base64
import csv
import json
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .domain import (
    Field,
    Grid,
    NonlinearitySpec,
    SymmetricOperator,
    assemble_operator,
    constant_field,
    field_header,
    h1_norm,
    l2_norm,
    nemytskii,
    rayleigh_extremes,
    shift_diagonal,
)
from .errors import (
    EXIT_HYPOTHESIS,
    EXIT_INCONCLUSIVE,
    EXIT_NUMERICAL,
    EXIT_OK,
    EXIT_USAGE,
    AttractorDimError,
    ConfigError,
    HypothesisViolationError,
)
from .semiflow import evolve, find_equilibrium, lyapunov_value
from .spectral import (
    assemble_shifted_operator,
    attractor_radius,
    clr_bound,
    count_below,
    hausdorff_bound,
    lambda_min_coercivity,
    lowest_eigs,
    proper_values,
)
from .tangent import dimension_estimate
from .verify import run_verify_suite

COMMANDS = ("simulate", "spectrum", "bound", "dim-estimate", "verify", "report")

_STATUS_BY_EXIT = {
    EXIT_OK: "ok",
    EXIT_USAGE: "config-error",
    EXIT_HYPOTHESIS: "hypothesis-violation",
    EXIT_NUMERICAL: "numerical-failure",
    EXIT_INCONCLUSIVE: "inconclusive",
}


@dataclass
class RunRecord:
    command: str
    config_hash: str
    seed: int
    started_utc: str
    finished_utc: str
    tool_version: str
    status: str
    exit_code: int
    error: str | None
    outputs: dict

    def as_dict(self) -> dict:
        return {
            "command": self.command,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "started_utc": self.started_utc,
            "finished_utc": self.finished_utc,
            "tool_version": self.tool_version,
            "status": self.status,
            "exit_code": self.exit_code,
            "error": self.error,
            "outputs": self.outputs,
        }


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds")


def _sanitize(obj):
    """Recursively convert to JSON-serializable python scalars."""
    if isinstance(obj, dict):
        return {str(k): _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):  # bool before int: bool is an int
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_sanitize(v) for v in obj.tolist()]
    return obj


@dataclass
class Problem:
    """All per-config objects the commands share."""

    cfg: ExperimentConfig
    grid: Grid
    beta: Field
    A: SymmetricOperator
    spec: NonlinearitySpec
    u0: Field
    d_field: Field | None


def build_problem(cfg: ExperimentConfig) -> Problem:
    grid = cfg.grid
    beta = cfg.beta_field()
    A = assemble_operator(grid, beta)
    spec = cfg.nonlinearity()
    spec.check_growth(grid, u_range=cfg.growth_check_range)
    d_field = cfg.d_field()
    if d_field is not None and np.any(d_field.values < 0):
        raise ConfigError(["dissipation envelope d_potential must be nonnegative"])
    return Problem(cfg, grid, beta, A, spec, cfg.u0_field(), d_field)


# ---------------------------------------------------------------------------
# individual commands

def _cmd_simulate(p: Problem, rng: np.random.Generator) -> dict:
    cfg = p.cfg
    traj = evolve(p.u0, cfg.time, p.spec, p.A)
    rows = []
    for t, state in zip(traj.times, traj.states):
        rows.append(
            {
                "time": float(t),
                "l2": l2_norm(state),
                "h1": h1_norm(state),
                "lyapunov": lyapunov_value(state, p.spec, p.A),
            }
        )
    out = {
        "series": rows,
        "final_time": float(traj.times[-1]),
        "final_l2": rows[-1]["l2"],
        "final_h1": rows[-1]["h1"],
    }
    if cfg.output.save_fields:
        snaps = []
        for t, state in zip(traj.times, traj.states):
            payload = field_header(p.grid) + state.values.astype("<f8").tobytes()
            snaps.append(
                {"time": float(t), "data_b64": base64.b64encode(payload).decode()}
            )
        out["snapshots"] = snaps
    return out


def _cmd_spectrum(p: Problem, rng: np.random.Generator) -> dict:
    cfg = p.cfg
    lam1 = lambda_min_coercivity(p.A, cfg.spectral)
    lam0, Lam0 = rayleigh_extremes(p.A)
    vals, _ = lowest_eigs(p.A, cfg.spectral)
    delta = cfg.constants.delta
    df0 = nemytskii(p.spec, constant_field(p.grid, 0.0), 1)
    shifted = assemble_shifted_operator(p.A, df0, delta)
    mu = proper_values(shifted, min(cfg.spectral.k_eigs, p.grid.dof), cfg.spectral)
    threshold = 0.5 * (1.0 - delta) * lam1
    n_count = count_below(shifted, threshold, cfg.spectral)
    return {
        "lambda1": lam1,
        "lambda0": lam0,
        "Lambda0": Lam0,
        "eigenvalues": [float(v) for v in vals],
        "shifted_proper_values": [float(v) for v in mu],
        "delta": delta,
        "count_threshold": threshold,
        "n_count": int(n_count),
    }


def _invariant_set_norms(p: Problem, lam0, Lam0, radius) -> tuple[float, float, float]:
    dim = p.cfg.dimension
    table = p.cfg.constants
    if dim.set_h1 is not None and dim.set_l52 is not None and dim.set_l6 is not None:
        return dim.set_h1, dim.set_l52, dim.set_l6
    if radius is None:
        raise ConfigError(
            ["bound requires either [dimension] set_h1/set_l52/set_l6 or a "
             "dissipation envelope d_potential to derive them"]
        )
    s = radius.s_radius
    set_h1 = dim.set_h1 if dim.set_h1 is not None else s
    set_l6 = dim.set_l6 if dim.set_l6 is not None else table.sobolev(6.0) * set_h1
    set_l52 = dim.set_l52 if dim.set_l52 is not None else table.sobolev(2.5) * set_h1
    return set_h1, set_l52, set_l6


def _cmd_bound(p: Problem, rng: np.random.Generator) -> dict:
    cfg = p.cfg
    table = cfg.constants
    delta = table.delta
    lam1 = lambda_min_coercivity(p.A, cfg.spectral)
    lam0, Lam0 = rayleigh_extremes(p.A)
    df0 = nemytskii(p.spec, constant_field(p.grid, 0.0), 1)
    shifted = assemble_shifted_operator(p.A, df0, delta)
    mu1 = float(proper_values(shifted, 1, cfg.spectral)[0])
    threshold = 0.5 * (1.0 - delta) * lam1
    n_count = count_below(shifted, threshold, cfg.spectral)

    radius = None
    clr = None
    clr_diag = {}
    if p.d_field is not None:
        qprime = cfg.q / (cfg.q - 1.0)
        eq = find_equilibrium(constant_field(p.grid, 0.0), p.spec, p.A, cfg.time)
        radius = attractor_radius(
            p.d_field, cfg.q, lam0, Lam0, table.sobolev(qprime), eq, p.spec,
            u_range=cfg.growth_check_range,
        )
        eps_bar = 0.25 * (1.0 - delta) * lam1
        eps_star = 1.0 if cfg.growth_c == 0 else min(1.0, eps_bar / cfg.growth_c)
        v_field = Field(p.grid, (2.0 / eps_star) * p.d_field.values)
        clr = clr_bound(v_field, cfg.q, table)
        counter = shift_diagonal(
            shifted, -3.0 * eps_bar - v_field.values, kind="clr_comparison"
        )
        clr_diag = {
            "eps_bar": eps_bar,
            "eps_star": eps_star,
            "negative_count": int(count_below(counter, 0.0, cfg.spectral)),
        }

    set_h1, set_l52, set_l6 = _invariant_set_norms(p, lam0, Lam0, radius)
    report = hausdorff_bound(
        gamma=cfg.growth_gamma,
        lambda0=lam0,
        lambda1=lam1,
        delta=delta,
        c_growth=cfg.growth_c,
        set_h1=set_h1,
        set_l52=set_l52,
        set_l6=set_l6,
        table=table,
        mu1_shifted=mu1,
        n_count=n_count,
        Lambda0=Lam0,
        clr=clr,
        s_radius=None if radius is None else radius.s_radius,
        phi_bound=None if radius is None else radius.phi_bound,
    )
    out = {"bound_report": report.as_dict()}
    if clr_diag:
        out["clr_diagnostics"] = clr_diag
    return out


def _cmd_dim_estimate(p: Problem, rng: np.random.Generator) -> dict:
    cfg = p.cfg
    dim = cfg.dimension
    ensemble = cfg.ensemble_fields(rng)
    report, bundles = dimension_estimate(
        ensemble,
        dim.d_max,
        cfg.time,
        p.spec,
        p.A,
        margin=dim.margin,
        settle_fraction=dim.settle_fraction,
        reortho_stride=dim.reortho_stride,
        rng=rng,
    )
    history = []
    if bundles:
        logvol = np.zeros(dim.d_max)
        for rec in bundles[0].history:
            logvol = logvol + np.cumsum(rec.log_r)
            history.append(
                {
                    "time": rec.time + rec.duration,
                    "log_volume": [float(v) for v in logvol],
                    "trace_sum": [float(v) for v in np.cumsum(rec.trace_terms)],
                }
            )
    return {"dimension": report.as_dict(), "history": history}


def _cmd_verify(p: Problem, rng: np.random.Generator) -> dict:
    cfg = p.cfg
    lam0, Lam0 = rayleigh_extremes(p.A)
    checks = run_verify_suite(
        p.grid,
        p.spec,
        p.A,
        cfg.time,
        cfg.spectral,
        cfg.constants,
        rng,
        d_field=p.d_field,
        q=cfg.q,
        sigma=cfg.sigma,
        c_growth=cfg.growth_c,
        gamma=cfg.growth_gamma,
        lambda0=lam0,
        Lambda0=Lam0,
    )
    return {
        "checks": [c.as_dict() for c in checks],
        "all_passed": all(c.passed for c in checks),
    }


def execute(command: str, cfg: ExperimentConfig, seed: int = 0) -> RunRecord:
    """Run one command against a validated config and wrap the outcome."""
    if command not in COMMANDS or command == "report":
        raise ConfigError([f"unknown or unsupported run command {command!r}"])
    started = _now()
    rng = np.random.default_rng(seed)
    status, exit_code, error, outputs = "ok", EXIT_OK, None, {}
    try:
        problem = build_problem(cfg)
        fn = {
            "simulate": _cmd_simulate,
            "spectrum": _cmd_spectrum,
            "bound": _cmd_bound,
            "dim-estimate": _cmd_dim_estimate,
            "verify": _cmd_verify,
        }[command]
        outputs = fn(problem, rng)
        outputs["grid"] = {
            "extents": [list(e) for e in cfg.grid.extents],
            "shape": list(cfg.grid.shape),
        }
        if command == "dim-estimate" and outputs["dimension"]["inconclusive"]:
            status, exit_code = "inconclusive", EXIT_INCONCLUSIVE
        if command == "verify" and not outputs["all_passed"]:
            status, exit_code = "numerical-failure", EXIT_NUMERICAL
    except HypothesisViolationError as exc:
        status, exit_code, error = "hypothesis-violation", EXIT_HYPOTHESIS, str(exc)
    except ConfigError as exc:
        status, exit_code, error = "config-error", EXIT_USAGE, str(exc)
    except AttractorDimError as exc:
        status, exit_code, error = (
            _STATUS_BY_EXIT.get(exc.exit_code, "numerical-failure"),
            exc.exit_code,
            str(exc),
        )
    return RunRecord(
        command=command,
        config_hash=cfg.config_hash(),
        seed=seed,
        started_utc=started,
        finished_utc=_now(),
        tool_version=__version__,
        status=status,
        exit_code=exit_code,
        error=error,
        outputs=_sanitize(outputs),
    )


# ---------------------------------------------------------------------------
# comparison report

def build_report(records: list[RunRecord | dict]) -> list[dict]:
    """Merge bound and dimension records per config into comparison rows."""
    if not records:
        raise ConfigError(["report requires at least one run record"])
    dicts = [r.as_dict() if isinstance(r, RunRecord) else dict(r) for r in records]
    groups: dict[str, dict] = {}
    order: list[str] = []
    for rec in dicts:
        key = rec.get("config_hash", "?")
        if key not in groups:
            groups[key] = {"config_hash": key, "records": []}
            order.append(key)
        groups[key]["records"].append(rec)
    reference_grid = None
    rows = []
    for key in order:
        recs = groups[key]["records"]
        row = {
            "config_hash": key,
            "commands": ",".join(sorted({r.get("command", "?") for r in recs})),
            "d_estimate": None,
            "criterion_at_d": None,
            "d_final": None,
            "d1": None,
            "d2": None,
            "lambda1": None,
            "n_count": None,
            "statuses": ",".join(sorted({r.get("status", "?") for r in recs})),
            "grid": None,
            "grid_compatible": True,
        }
        for rec in recs:
            outputs = rec.get("outputs", {})
            grid_desc = outputs.get("grid")
            if grid_desc:
                row["grid"] = grid_desc
            if "dimension" in outputs:
                dim = outputs["dimension"]
                row["d_estimate"] = dim.get("d_certified")
                crit = dim.get("criterion") or []
                if dim.get("d_certified") and len(crit) >= dim["d_certified"]:
                    row["criterion_at_d"] = crit[dim["d_certified"] - 1]
            if "bound_report" in outputs:
                br = outputs["bound_report"]
                row["d_final"] = br.get("d_final")
                row["d1"] = br.get("d1")
                row["d2"] = br.get("d2")
                row["lambda1"] = br.get("lambda1")
                row["n_count"] = br.get("n_count")
            if "lambda1" in outputs and row["lambda1"] is None:
                row["lambda1"] = outputs["lambda1"]
        if row["grid"] is not None:
            if reference_grid is None:
                reference_grid = row["grid"]
            elif row["grid"] != reference_grid:
                row["grid_compatible"] = False
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# artifact writers

def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(_sanitize(payload), sort_keys=True, indent=2) + "\n")


def _write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k) for k in columns})


def _plot(path: Path, draw) -> None:
    import matplotlib

    matplotlib.use("Agg", force=False)
    matplotlib.rcParams["svg.hashsalt"] = "attractor-dim"
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    draw(ax)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def materialize(record: RunRecord | dict, outdir) -> list[str]:
    """Write run.json plus the command's CSV/SVG artifacts; returns paths."""
    rec = record.as_dict() if isinstance(record, RunRecord) else dict(record)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []

    run_path = outdir / "run.json"
    _write_json(run_path, rec)
    written.append(str(run_path))

    outputs = rec.get("outputs", {})
    command = rec.get("command")
    svg_wanted = True

    if command == "simulate" and "series" in outputs:
        rows = outputs["series"]
        path = outdir / "series.csv"
        _write_csv(path, rows, ["time", "l2", "h1", "lyapunov"])
        written.append(str(path))
        if svg_wanted and rows:
            def draw(ax):
                ts = [r["time"] for r in rows]
                for key in ("l2", "h1", "lyapunov"):
                    ax.plot(ts, [r[key] for r in rows], label=key)
                ax.set_xlabel("time")
                ax.legend()
                ax.set_title("trajectory norms")
            svg = outdir / "series.svg"
            _plot(svg, draw)
            written.append(str(svg))
        for snap in outputs.get("snapshots", []):
            path = outdir / f"state_{snap['time']:.6f}.fld"
            path.write_bytes(base64.b64decode(snap["data_b64"]))
            written.append(str(path))

    if command == "spectrum" and "eigenvalues" in outputs:
        rows = [
            {"index": i + 1, "eigenvalue": v}
            for i, v in enumerate(outputs["eigenvalues"])
        ]
        path = outdir / "spectrum.csv"
        _write_csv(path, rows, ["index", "eigenvalue"])
        written.append(str(path))
        if svg_wanted and rows:
            def draw(ax):
                ax.bar([r["index"] for r in rows], [r["eigenvalue"] for r in rows])
                ax.set_xlabel("index")
                ax.set_ylabel("eigenvalue")
                ax.set_title("lowest eigenvalues")
            svg = outdir / "spectrum.svg"
            _plot(svg, draw)
            written.append(str(svg))

    if command == "bound" and "bound_report" in outputs:
        br = outputs["bound_report"]
        path = outdir / "bound.csv"
        cols = ["lambda1", "lambda0", "Lambda0", "mu1_shifted", "n_count",
                "d_const", "d1", "d2", "d_final", "clr_bound", "s_radius",
                "phi_bound"]
        _write_csv(path, [br], cols)
        written.append(str(path))
        if svg_wanted:
            def draw(ax):
                names = ["d1", "d2", "d_final"]
                ax.bar(names, [br["d1"], br["d2"], br["d_final"]])
                ax.set_title("dimension thresholds")
            svg = outdir / "bound.svg"
            _plot(svg, draw)
            written.append(str(svg))

    if command == "dim-estimate" and "dimension" in outputs:
        history = outputs.get("history", [])
        if history:
            d_max = len(history[0]["log_volume"])
            rows = []
            for rec_h in history:
                row = {"time": rec_h["time"]}
                for d in range(d_max):
                    row[f"log_volume_d{d + 1}"] = rec_h["log_volume"][d]
                    row[f"trace_sum_d{d + 1}"] = rec_h["trace_sum"][d]
                rows.append(row)
            cols = ["time"] + [f"log_volume_d{d + 1}" for d in range(d_max)] + [
                f"trace_sum_d{d + 1}" for d in range(d_max)
            ]
            path = outdir / "history.csv"
            _write_csv(path, rows, cols)
            written.append(str(path))
            if svg_wanted:
                def draw(ax):
                    ts = [r["time"] for r in rows]
                    for d in range(d_max):
                        ax.plot(ts, [r[f"log_volume_d{d + 1}"] for r in rows],
                                label=f"d={d + 1}")
                    ax.set_xlabel("time")
                    ax.set_ylabel("log volume")
                    ax.legend()
                    ax.set_title("tangent volume contraction")
                svg = outdir / "logvolume.svg"
                _plot(svg, draw)
                written.append(str(svg))
        dim = outputs["dimension"]
        if svg_wanted and dim.get("criterion"):
            def draw(ax):
                crit = dim["criterion"]
                ax.bar(range(1, len(crit) + 1), crit)
                ax.axhline(-dim["margin"], linestyle="--")
                ax.set_xlabel("d")
                ax.set_ylabel("time-averaged contraction criterion")
                ax.set_title("per-dimension criterion")
            svg = outdir / "criterion.svg"
            _plot(svg, draw)
            written.append(str(svg))

    if command == "verify" and "checks" in outputs:
        path = outdir / "verify.csv"
        _write_csv(path, outputs["checks"],
                   ["name", "passed", "worst", "tolerance", "detail"])
        written.append(str(path))

    return written


def materialize_report(rows: list[dict], outdir) -> list[str]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    path = outdir / "report.csv"
    cols = ["config_hash", "commands", "d_estimate", "criterion_at_d", "d_final",
            "d1", "d2", "lambda1", "n_count", "statuses", "grid_compatible"]
    _write_csv(path, rows, cols)
    written.append(str(path))

    def draw(ax):
        xs = range(len(rows))
        est = [r["d_estimate"] if r["d_estimate"] is not None else float("nan")
               for r in rows]
        fin = [r["d_final"] if r["d_final"] is not None else float("nan")
               for r in rows]
        ax.plot(xs, est, "o-", label="volume-contraction estimate")
        ax.plot(xs, fin, "s--", label="analytic bound")
        ax.set_xlabel("record")
        ax.set_ylabel("dimension")
        ax.legend()
        ax.set_title("estimate vs analytic bound")

    svg = outdir / "report.svg"
    _plot(svg, draw)
    written.append(str(svg))
    return written
