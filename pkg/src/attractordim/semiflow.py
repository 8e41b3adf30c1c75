"""Time integration of the semilinear parabolic problem u' + A u = f(u).

The scheme is IMEX Euler: the stiff linear part is implicit, the reaction
explicit, so every step solves (I + dt*A) u_next = u + dt*f(u) by conjugate
gradients.  Equilibria come from Newton iteration on A u - f(u) = 0.

Each trajectory has a single writer; distinct trajectories may evolve
concurrently against shared read-only operators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.integrate
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .domain import (
    Field,
    NonlinearitySpec,
    SymmetricOperator,
    gradient_energy,
    l2_norm,
    nemytskii,
    rayleigh_extremes,
)
from .errors import (
    BlowUpError,
    DomainError,
    LinearSolveError,
    NumericalError,
    SingularJacobianError,
)

# tighter than the documented 1e-10 contract so linearization diagnostics
# are not dominated by solver noise
CG_RTOL = 1e-12


@dataclass(frozen=True)
class SemiflowConfig:
    dt: float
    t_end: float
    scheme: str = "imex-euler"
    newton_tol: float = 1e-10
    newton_max_iter: int = 30
    alpha: float = 0.25
    blowup_threshold: float = 1e8
    snapshot_stride: int = 1

    def __post_init__(self):
        if not (0 < self.dt < self.t_end):
            raise DomainError("require 0 < dt < t_end")
        if self.scheme != "imex-euler":
            raise DomainError(f"unknown scheme {self.scheme!r}")
        if self.newton_tol <= 0 or self.newton_max_iter < 1:
            raise DomainError("Newton tolerances must be positive")
        if not (0.0 < self.alpha <= 0.5):
            raise DomainError(f"alpha must lie in (0, 1/2], got {self.alpha}")
        if self.blowup_threshold <= 0 or self.snapshot_stride < 1:
            raise DomainError("blow-up threshold and stride must be positive")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.t_end / self.dt)))


@dataclass
class Trajectory:
    """Snapshots of one solution; times strictly increasing from 0."""

    times: np.ndarray
    states: list[Field]
    stride: int = 1

    def __post_init__(self):
        if len(self.times) != len(self.states):
            raise DomainError("trajectory times and states differ in length")
        if len(self.times) and self.times[0] != 0.0:
            raise DomainError("trajectory must start at t = 0")
        if np.any(np.diff(self.times) <= 0):
            raise DomainError("trajectory times must be strictly increasing")
        grids = {s.grid for s in self.states}
        if len(grids) > 1:
            raise DomainError("trajectory states live on different grids")

    @property
    def grid(self):
        return self.states[0].grid

    def state_at(self, index: int) -> Field:
        return self.states[index]


def _cg_solve(mat: sp.spmatrix, rhs: np.ndarray, context: str) -> np.ndarray:
    sol, info = spla.cg(mat, rhs, rtol=CG_RTOL, atol=0.0, maxiter=10 * rhs.size + 200)
    if info != 0:
        raise LinearSolveError(f"conjugate gradients failed in {context} (info={info})")
    return sol


def step(u: Field, spec: NonlinearitySpec, A: SymmetricOperator, dt: float) -> Field:
    """One IMEX Euler step: solve (I + dt*A) u_next = u + dt*f(u)."""
    if dt <= 0:
        raise DomainError("dt must be positive")
    rhs = u.values + dt * nemytskii(spec, u, 0).values
    mat = (sp.identity(A.dof, format="csr") + dt * A.matrix).tocsr()
    return Field(u.grid, _cg_solve(mat, rhs, "imex step"))


def evolve_steps(
    u0: Field,
    n_steps: int,
    dt: float,
    spec: NonlinearitySpec,
    A: SymmetricOperator,
    blowup_threshold: float = 1e8,
    snapshot_stride: int = 1,
) -> Trajectory:
    """Drive n_steps IMEX steps, recording snapshots at the given stride;
    aborts with the last finite time on blow-up."""
    if dt <= 0 or n_steps < 0:
        raise DomainError("require dt > 0 and n_steps >= 0")
    mat = (sp.identity(A.dof, format="csr") + dt * A.matrix).tocsr()
    times = [0.0]
    states = [u0]
    u = u0
    t = 0.0
    for k in range(1, n_steps + 1):
        nrm = l2_norm(u)
        if not math.isfinite(nrm) or nrm > blowup_threshold:
            raise BlowUpError(t, nrm, blowup_threshold)
        rhs = u.values + dt * nemytskii(spec, u, 0).values
        vals = _cg_solve(mat, rhs, f"imex step {k}")
        if not np.all(np.isfinite(vals)):
            raise BlowUpError(t, float("inf"), blowup_threshold)
        u = Field(u0.grid, vals)
        t = k * dt
        if k % snapshot_stride == 0 or k == n_steps:
            times.append(t)
            states.append(u)
    nrm = l2_norm(u)
    if nrm > blowup_threshold:
        raise BlowUpError(t, nrm, blowup_threshold)
    return Trajectory(np.asarray(times), states, stride=snapshot_stride)


def evolve(
    u0: Field, cfg: SemiflowConfig, spec: NonlinearitySpec, A: SymmetricOperator
) -> Trajectory:
    """Repeat the IMEX step over [0, t_end] under the given configuration."""
    return evolve_steps(
        u0, cfg.n_steps, cfg.dt, spec, A,
        blowup_threshold=cfg.blowup_threshold,
        snapshot_stride=cfg.snapshot_stride,
    )


@dataclass(frozen=True)
class EquilibriumResult:
    phi: Field
    residual_norm: float
    converged: bool
    iterations: int = 0


def find_equilibrium(
    guess: Field, spec: NonlinearitySpec, A: SymmetricOperator, cfg: SemiflowConfig
) -> EquilibriumResult:
    """Newton iteration on A u - f(u) = 0 with Jacobian A - diag(du f)."""
    u = guess.values.copy()
    grid = guess.grid
    sqrt_w = math.sqrt(grid.cell_volume)
    residual = math.inf
    for it in range(cfg.newton_max_iter + 1):
        fu = nemytskii(spec, Field(grid, u), 0).values
        g = A.matrix @ u - fu
        residual = sqrt_w * float(np.linalg.norm(g))
        if residual <= cfg.newton_tol:
            return EquilibriumResult(Field(grid, u), residual, True, it)
        if it == cfg.newton_max_iter:
            break
        dfu = nemytskii(spec, Field(grid, u), 1).values
        jac = (A.matrix - sp.diags(dfu)).tocsc()
        try:
            lu = spla.splu(jac)
            delta = lu.solve(g)
        except RuntimeError as exc:
            raise SingularJacobianError(f"Newton Jacobian is singular: {exc}") from exc
        if not np.all(np.isfinite(delta)):
            raise SingularJacobianError("Newton update is non-finite")
        u = u - delta
    return EquilibriumResult(Field(grid, u), residual, False, cfg.newton_max_iter)


def antiderivative_integral(spec: NonlinearitySpec, u: Field, epsabs: float = 1e-10) -> float:
    """integral over the box of F(x, u(x)) with F(x, s) the u-antiderivative
    of f, computed per node by adaptive quadrature."""
    x, y, z = u.grid.node_coordinates()
    total = 0.0
    for i, (xi, yi, zi, ui) in enumerate(zip(x, y, z, u.values)):
        if ui == 0.0:
            continue
        val, err = scipy.integrate.quad(
            lambda s: float(spec.value(xi, yi, zi, s)), 0.0, ui,
            epsabs=epsabs, limit=200,
        )
        if not math.isfinite(val) or err > max(epsabs * 10, 1e-8 * abs(val)):
            raise NumericalError(
                f"antiderivative quadrature failed at node {i} (error {err:.3e})"
            )
        total += val
    return u.grid.cell_volume * total


def lyapunov_value(u: Field, spec: NonlinearitySpec, A: SymmetricOperator) -> float:
    """Energy functional a(u, u) - integral(F(x, u)) decreasing along the flow."""
    return A.form(u, u) - antiderivative_integral(spec, u)


@dataclass(frozen=True)
class PairDiagnostics:
    """Fitted certificates for a trajectory pair.

    k_fit is the smallest exponential rate K with
        |z(t)|_L2^2 + lambda0 * integral_0^t |z|_H1^2 <= e^{K t} |z(0)|_L2^2
    along the run (right-endpoint quadrature for the time integral, which
    matches the discrete energy identity of the implicit step).
    smoothing_fit is the smallest L with |z(t)|_H1 <= L t^{-(alpha+1/2)} |z0|_L2.
    """

    k_fit: float
    smoothing_fit: float
    max_violation: float
    lambda0: float


def pair_diagnostics(
    u0: Field,
    v0: Field,
    cfg: SemiflowConfig,
    spec: NonlinearitySpec,
    A: SymmetricOperator,
) -> PairDiagnostics:
    u0.same_grid(v0)
    if np.array_equal(u0.values, v0.values):
        raise DomainError("pair diagnostics require distinct initial states")
    lam0, _ = rayleigh_extremes(A)
    run_cfg = SemiflowConfig(
        dt=cfg.dt, t_end=cfg.t_end, newton_tol=cfg.newton_tol,
        newton_max_iter=cfg.newton_max_iter, alpha=cfg.alpha,
        blowup_threshold=cfg.blowup_threshold, snapshot_stride=1,
    )
    tu = evolve(u0, run_cfg, spec, A)
    tv = evolve(v0, run_cfg, spec, A)
    z0 = Field(u0.grid, u0.values - v0.values)
    l2z0_sq = l2_norm(z0) ** 2
    acc = 0.0
    rates = []
    lhs_values = [l2z0_sq]
    smoothing = 0.0
    for k in range(1, len(tu.times)):
        z = Field(u0.grid, tu.states[k].values - tv.states[k].values)
        t = float(tu.times[k])
        h1_sq = gradient_energy(z) + l2_norm(z) ** 2
        acc += cfg.dt * h1_sq
        lhs = l2_norm(z) ** 2 + lam0 * acc
        lhs_values.append(lhs)
        rates.append(math.log(lhs / l2z0_sq) / t)
        smoothing = max(smoothing, math.sqrt(h1_sq) * t ** (cfg.alpha + 0.5)
                        / math.sqrt(l2z0_sq))
    k_fit = max(rates)
    violation = max(
        lhs - math.exp(k_fit * t) * l2z0_sq
        for lhs, t in zip(lhs_values, tu.times)
    )
    return PairDiagnostics(
        k_fit=float(k_fit),
        smoothing_fit=float(smoothing),
        max_violation=float(violation),
        lambda0=float(lam0),
    )
