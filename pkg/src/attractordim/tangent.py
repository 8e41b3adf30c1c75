"""Linearized flow along a base trajectory: tangent bundles, Gram-volume
tracking, trace sums on subspaces, and the volume-contraction dimension
estimate.

The discrete evolution family composes per-step tangent maps (diffusion
implicit, reaction coefficient explicit at the left endpoint), so the
cocycle identity holds exactly by construction and the family is the exact
Jacobian of the discrete semiflow.

Tangent vectors advance independently between re-orthonormalization
barriers; distinct ensemble members are fully independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .domain import Field, NonlinearitySpec, SymmetricOperator, nemytskii, shift_diagonal
from .errors import DegenerateBundleError, DomainError, NumericalError
from .semiflow import SemiflowConfig, Trajectory, evolve, evolve_steps

RANK_COLLAPSE_FLOOR = 1e-300
ORTHO_TOL = 1e-8


@dataclass(frozen=True)
class LinearizedOperator:
    """Frozen-time operator of the linearized equation: A - diag(du f(., ubar))."""

    operator: SymmetricOperator
    time: float

    @property
    def matrix(self):
        return self.operator.matrix

    @property
    def grid(self):
        return self.operator.grid


def linearized_operator(
    base: Trajectory, t_index: int, spec: NonlinearitySpec, A: SymmetricOperator
) -> LinearizedOperator:
    if not (0 <= t_index < len(base.times)):
        raise DomainError(f"trajectory index {t_index} out of range")
    dfu = nemytskii(spec, base.state_at(t_index), 1)
    op = shift_diagonal(A, -dfu.values, kind="linearized_form")
    return LinearizedOperator(op, float(base.times[t_index]))


@dataclass
class HistoryRecord:
    """One re-orthonormalization segment.

    time:        left endpoint of the segment (orthonormal basis fresh);
    duration:    segment length in time units;
    trace_terms: a(t; q_i, q_i) per vector on the fresh basis;
    log_r:       per-vector log of the weighted QR diagonal accumulated
                 over the segment.
    """

    time: float
    duration: float
    trace_terms: np.ndarray
    log_r: np.ndarray

    @property
    def trace_sum(self) -> float:
        return float(self.trace_terms.sum())

    @property
    def gram_volume(self) -> float:
        """Volume contraction factor of the segment (product of QR diagonal)."""
        return float(np.exp(self.log_r.sum()))


@dataclass
class TangentBundle:
    """d tangent vectors riding a base trajectory, with volume history."""

    base: Trajectory
    vectors: np.ndarray  # dof x d, weighted-orthonormal columns after reortho
    reortho_stride: int = 1
    history: list[HistoryRecord] = dc_field(default_factory=list)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != self.base.grid.dof:
            raise DomainError("tangent vectors must form a dof x d array")
        if self.dimension > self.base.grid.dof:
            raise DomainError("bundle dimension exceeds grid dof")
        if self.reortho_stride < 1:
            raise DomainError("re-orthonormalization stride must be positive")

    @property
    def dimension(self) -> int:
        return self.vectors.shape[1]

    @property
    def log_volume(self) -> float:
        return float(sum(rec.log_r.sum() for rec in self.history))

    def log_volume_per_d(self) -> np.ndarray:
        """Accumulated log-volume of the leading d-sub-bundles, d = 1..D."""
        if not self.history:
            return np.zeros(self.dimension)
        return np.cumsum(np.sum([rec.log_r for rec in self.history], axis=0))

    def gram(self) -> np.ndarray:
        w = self.base.grid.cell_volume
        return w * (self.vectors.T @ self.vectors)


def orthonormal_start(
    base: Trajectory, d: int, rng: np.random.Generator, reortho_stride: int = 1
) -> TangentBundle:
    """Random weighted-orthonormal starting bundle."""
    dof = base.grid.dof
    raw = rng.standard_normal((dof, d))
    q, _ = _weighted_qr(raw, base.grid.cell_volume)
    return TangentBundle(base, q, reortho_stride=reortho_stride)


def _weighted_qr(vecs: np.ndarray, w: float) -> tuple[np.ndarray, np.ndarray]:
    """QR with positive diagonal in the cell-volume-weighted inner product."""
    q, r = np.linalg.qr(math.sqrt(w) * vecs)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    q = q * signs
    r = r * signs[:, np.newaxis]
    return q / math.sqrt(w), r


def _implicit_factor(A: SymmetricOperator, dt: float):
    mat = (sp.identity(A.dof, format="csr") + dt * A.matrix).tocsc()
    try:
        return spla.splu(mat)
    except RuntimeError as exc:
        raise NumericalError(f"tangent implicit factorization failed: {exc}") from exc


def tangent_steps(
    vecs: np.ndarray,
    base: Trajectory,
    spec: NonlinearitySpec,
    A: SymmetricOperator,
    start: int,
    stop: int,
    dt: float,
    lu=None,
) -> np.ndarray:
    """Advance columns through steps start..stop-1 of the discrete family.

    Each step applies the same IMEX splitting as the semiflow — diffusion
    implicit, reaction coefficient explicit and frozen at the left endpoint —
    which is exactly the Jacobian of the discrete semiflow step, so for a
    u-linear reaction the tangent map reproduces state differences to
    round-off.
    """
    out = np.asarray(vecs, dtype=np.float64)
    if out.ndim == 1:
        out = out[:, np.newaxis]
    if lu is None:
        lu = _implicit_factor(A, dt)
    for n in range(start, stop):
        dfu = nemytskii(spec, base.state_at(n), 1).values
        out = lu.solve(out + dt * dfu[:, np.newaxis] * out)
        if not np.all(np.isfinite(out)):
            raise NumericalError(f"tangent step {n} produced non-finite values")
    return out


def _require_step_resolved(base: Trajectory, cfg: SemiflowConfig) -> float:
    dt = float(np.diff(base.times).min()) if len(base.times) > 1 else cfg.dt
    if base.stride != 1 or abs(dt - cfg.dt) > 1e-12 * max(cfg.dt, 1.0):
        raise DomainError(
            "tangent propagation requires a stride-1 base trajectory with matching dt"
        )
    return dt


def propagate_tangents(
    bundle: TangentBundle,
    cfg: SemiflowConfig,
    spec: NonlinearitySpec,
    A: SymmetricOperator,
    start_index: int = 0,
    end_index: int | None = None,
) -> TangentBundle:
    """Advance the bundle along its base, re-orthonormalizing every stride
    steps and accumulating per-vector log-volume from the QR diagonal."""
    base = bundle.base
    dt = _require_step_resolved(base, cfg)
    n_total = len(base.times) - 1
    stop = n_total if end_index is None else end_index
    if not (0 <= start_index <= stop <= n_total):
        raise DomainError("tangent propagation indices out of range")
    w = base.grid.cell_volume
    vecs, _ = _weighted_qr(bundle.vectors, w)
    history = list(bundle.history)
    lu = _implicit_factor(A, dt)
    n = start_index
    while n < stop:
        seg = min(bundle.reortho_stride, stop - n)
        lin = linearized_operator(base, n, spec, A)
        traces = w * np.einsum("id,id->d", vecs, lin.matrix @ vecs)
        vecs = tangent_steps(vecs, base, spec, A, n, n + seg, dt, lu=lu)
        vecs, r = _weighted_qr(vecs, w)
        diag = np.diag(r)
        if np.any(diag < RANK_COLLAPSE_FLOOR):
            raise DegenerateBundleError(
                f"tangent bundle rank collapse at step {n + seg} "
                f"(QR diagonal {diag.min():.3e})"
            )
        history.append(
            HistoryRecord(
                time=float(base.times[n]),
                duration=seg * dt,
                trace_terms=np.asarray(traces),
                log_r=np.log(diag),
            )
        )
        n += seg
    return TangentBundle(base, vecs, bundle.reortho_stride, history)


def cocycle_residual(
    base: Trajectory,
    r: float,
    s: float,
    t: float,
    v: Field,
    cfg: SemiflowConfig,
    spec: NonlinearitySpec,
    A: SymmetricOperator,
) -> float:
    """Relative gap between stepping r->s->t and r->t; both sides compose the
    identical per-step solves, so the gap is pure round-off."""
    dt = _require_step_resolved(base, cfg)
    idx = {}
    for name, val in (("r", r), ("s", s), ("t", t)):
        pos = val / dt
        if abs(pos - round(pos)) > 1e-9:
            raise DomainError(f"time {name}={val} is off the snapshot lattice")
        idx[name] = int(round(pos))
    ir, is_, it = idx["r"], idx["s"], idx["t"]
    if not (0 <= ir <= is_ <= it <= len(base.times) - 1):
        raise DomainError("require r <= s <= t within the trajectory span")
    v.same_grid(base.states[0])
    via = tangent_steps(v.values, base, spec, A, ir, is_, dt)
    via = tangent_steps(via, base, spec, A, is_, it, dt)
    direct = tangent_steps(v.values, base, spec, A, ir, it, dt)
    denom = float(np.linalg.norm(v.values))
    if denom == 0.0:
        raise DomainError("cocycle residual requires a nonzero vector")
    return float(np.linalg.norm(via - direct)) / denom


def differentiability_residual(
    u0: Field,
    v0: Field,
    t: float,
    cfg: SemiflowConfig,
    spec: NonlinearitySpec,
    A: SymmetricOperator,
) -> float:
    """Normalized linearization defect
    |pi(t, v0) - pi(t, u0) - U(t)(v0 - u0)|_L2 / |v0 - u0|_L2."""
    u0.same_grid(v0)
    z0 = v0.values - u0.values
    if not np.any(z0):
        raise DomainError("differentiability residual requires distinct states")
    dt = cfg.dt
    n = int(round(t / dt))
    if abs(n * dt - t) > 1e-9 * max(t, 1.0):
        raise DomainError(f"time {t} is off the step lattice")
    if n == 0:
        return 0.0
    base = evolve_steps(u0, n, dt, spec, A,
                        blowup_threshold=cfg.blowup_threshold)
    other = evolve_steps(v0, n, dt, spec, A,
                         blowup_threshold=cfg.blowup_threshold)
    tangent = tangent_steps(z0, base, spec, A, 0, n, dt)
    defect = other.state_at(n).values - base.state_at(n).values - tangent[:, 0]
    w = math.sqrt(u0.grid.cell_volume)
    return float(w * np.linalg.norm(defect)) / (w * float(np.linalg.norm(z0)))


def trace_on_subspace(op: LinearizedOperator | SymmetricOperator, basis: np.ndarray) -> float:
    """Sum of the form over an L2-orthonormal basis of a subspace."""
    mat = op.matrix
    grid = op.grid
    basis = np.asarray(basis, dtype=float)
    if basis.ndim == 1:
        basis = basis[:, np.newaxis]
    w = grid.cell_volume
    gram = w * (basis.T @ basis)
    if float(np.max(np.abs(gram - np.eye(basis.shape[1])))) > ORTHO_TOL:
        raise DomainError("subspace basis is not L2-orthonormal to 1e-8")
    return float(w * np.einsum("id,id->", basis, mat @ basis))


def volume_ode_residual(bundle: TangentBundle) -> float:
    """Worst defect of the log-volume balance
    |delta(log G) / delta_t + Tr(A(t | E_d))| over the recorded segments."""
    if not bundle.history:
        raise DomainError("bundle history is empty")
    worst = 0.0
    for rec in bundle.history:
        rate = float(rec.log_r.sum()) / rec.duration
        worst = max(worst, abs(rate + float(rec.trace_terms.sum())))
    return worst


@dataclass(frozen=True)
class DimensionReport:
    """Volume-contraction dimension estimate over a finite horizon.

    criterion[d-1] is the worst (over the ensemble) time-averaged negative
    trace sum on the propagated d-subspace; contraction is certified at the
    smallest d whose criterion is <= -margin.  A finite horizon and a finite
    ensemble truncate the asymptotic statement, so an inconclusive result is
    a value, not an error.
    """

    d_certified: int | None
    d_max: int
    margin: float
    criterion: tuple[float, ...]
    trace_average: tuple[float, ...]
    horizon: float
    settle_time: float
    ensemble_size: int

    @property
    def inconclusive(self) -> bool:
        return self.d_certified is None

    def as_dict(self) -> dict:
        return {
            "d_certified": self.d_certified,
            "d_max": self.d_max,
            "margin": self.margin,
            "criterion": list(self.criterion),
            "trace_average": list(self.trace_average),
            "horizon": self.horizon,
            "settle_time": self.settle_time,
            "ensemble_size": self.ensemble_size,
            "inconclusive": self.inconclusive,
        }


def dimension_estimate(
    ensemble: list[Field],
    d_max: int,
    cfg: SemiflowConfig,
    spec: NonlinearitySpec,
    A: SymmetricOperator,
    margin: float = 1e-3,
    settle_fraction: float = 0.0,
    reortho_stride: int = 1,
    rng: np.random.Generator | None = None,
) -> tuple[DimensionReport, list[TangentBundle]]:
    """Propagate one d_max-bundle per ensemble member and average the trace
    sums of the leading subspaces after an optional settling window."""
    if not ensemble:
        raise DomainError("dimension estimate requires a nonempty ensemble")
    if d_max < 1 or d_max > ensemble[0].grid.dof:
        raise DomainError("d_max must lie in [1, dof]")
    if not (0.0 <= settle_fraction < 1.0):
        raise DomainError("settle fraction must lie in [0, 1)")
    rng = rng or np.random.default_rng(0)
    run = SemiflowConfig(
        dt=cfg.dt, t_end=cfg.t_end, newton_tol=cfg.newton_tol,
        newton_max_iter=cfg.newton_max_iter, alpha=cfg.alpha,
        blowup_threshold=cfg.blowup_threshold, snapshot_stride=1,
    )
    start = rng.standard_normal((ensemble[0].grid.dof, d_max))
    worst = np.full(d_max, -np.inf)
    bundles = []
    for u0 in ensemble:
        base = evolve(u0, run, spec, A)
        bundle = TangentBundle(base, start.copy(), reortho_stride=reortho_stride)
        bundle = propagate_tangents(bundle, run, spec, A)
        bundles.append(bundle)
        records = bundle.history
        t_settle = settle_fraction * cfg.t_end
        window = [rec for rec in records if rec.time >= t_settle - 1e-12]
        if not window:
            window = records
        span = sum(rec.duration for rec in window)
        trace_sums = np.array(
            [np.cumsum(rec.trace_terms) * rec.duration for rec in window]
        ).sum(axis=0) / span
        worst = np.maximum(worst, -trace_sums)
    d_certified = None
    for d in range(1, d_max + 1):
        if worst[d - 1] <= -margin:
            d_certified = d
            break
    return (
        DimensionReport(
            d_certified=d_certified,
            d_max=d_max,
            margin=float(margin),
            criterion=tuple(float(v) for v in worst),
            trace_average=tuple(float(-v) for v in worst),
            horizon=float(cfg.t_end),
            settle_time=float(settle_fraction * cfg.t_end),
            ensemble_size=len(ensemble),
        ),
        bundles,
    )
