"""Inequality verification suites run by the `verify` command.

Each check evaluates one structural inequality of the model on randomized
samples and reports the worst slack; a check passes when the slack never
drops below its tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import (
    Field,
    NonlinearitySpec,
    SymmetricOperator,
    constant_field,
    h1_norm,
    nemytskii,
    uniform_local_absorption_residual,
)
from .errors import AttractorDimError
from .semiflow import SemiflowConfig, find_equilibrium, pair_diagnostics
from .spectral import (
    ConstantsTable,
    SpectralConfig,
    assemble_shifted_operator,
    attractor_radius,
    dominating_potential,
    lieb_thirring_residual,
    subspace_compression_check,
)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    worst: float
    tolerance: float
    detail: str = ""

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "worst": self.worst,
            "tolerance": self.tolerance,
            "detail": self.detail,
        }


def check_absorption(
    grid, m_b: float, sigma: float, rng: np.random.Generator, samples: int = 100
) -> CheckResult:
    """Random-sample certification of the uniform-local absorption inequality."""
    tol = -1e-12
    worst = np.inf
    for _ in range(samples):
        omega = Field(grid, rng.standard_normal(grid.dof))
        u = Field(grid, rng.standard_normal(grid.dof))
        eps = float(10.0 ** rng.uniform(-2, 1))
        res = uniform_local_absorption_residual(omega, u, sigma, eps, m_b)
        worst = min(worst, res)
    return CheckResult("uniform_local_absorption", worst >= tol, float(worst), tol,
                       f"{samples} random (omega, u, eps) samples, sigma={sigma}")


def check_pair_contraction(
    grid, spec: NonlinearitySpec, A: SymmetricOperator, cfg: SemiflowConfig,
    rng: np.random.Generator, pairs: int = 10, amplitude: float = 0.3,
) -> CheckResult:
    """Fitted exponential-contraction certificates for random state pairs."""
    tol = 1e-10
    worst = -np.inf
    for _ in range(pairs):
        u0 = Field(grid, amplitude * rng.standard_normal(grid.dof))
        v0 = Field(grid, u0.values + amplitude * 1e-3 * rng.standard_normal(grid.dof))
        diag = pair_diagnostics(u0, v0, cfg, spec, A)
        worst = max(worst, diag.max_violation)
    return CheckResult("pair_contraction_certificate", worst <= tol, float(worst), tol,
                       f"{pairs} random pairs; violation of the fitted bound")


def check_compression(
    op: SymmetricOperator, cfg: SpectralConfig, rng: np.random.Generator,
    subspaces: int = 100, d_range: tuple[int, ...] = (1, 2, 3, 4, 5),
) -> CheckResult:
    """Min-max ordering of subspace compressions against the global spectrum."""
    tol = -1e-10
    worst = np.inf
    for k in range(subspaces):
        d = int(d_range[k % len(d_range)])
        basis = rng.standard_normal((op.dof, d))
        res = subspace_compression_check(op, basis, cfg)
        worst = min(worst, res.min_gap)
    return CheckResult("subspace_compression", worst >= tol, float(worst), tol,
                       f"{subspaces} random subspaces, d in {list(d_range)}")


def check_kinetic_inequality(
    op: SymmetricOperator, cfg: SpectralConfig, table: ConstantsTable,
    rng: np.random.Generator, families: int = 20, p: float = 2.5,
) -> CheckResult:
    """Orthonormal-family kinetic inequality with the configured constant."""
    tol = 0.0
    worst = np.inf
    grid = op.grid
    w = grid.cell_volume
    for k in range(families):
        d = 1 + k % 4
        raw = rng.standard_normal((op.dof, d))
        q, _ = np.linalg.qr(raw)
        q = q / np.sqrt(w)
        worst = min(worst, lieb_thirring_residual(q, grid, p, table))
    return CheckResult("kinetic_orthonormal_inequality", worst >= tol, float(worst),
                       tol, f"{families} random orthonormal families, p={p}")


def check_dissipative_radii(
    grid, spec: NonlinearitySpec, A: SymmetricOperator, d_field: Field,
    q: float, lambda0: float, Lambda0: float, m_qprime: float,
    cfg: SemiflowConfig, c_growth: float, gamma: float,
) -> list[CheckResult]:
    """Equilibrium radius bound plus the pointwise dominating-potential
    inequality at five sampled splits."""
    results = []
    eq = find_equilibrium(constant_field(grid, 0.0), spec, A, cfg)
    radius = attractor_radius(d_field, q, lambda0, Lambda0, m_qprime, eq, spec)
    slack = radius.phi_bound - h1_norm(eq.phi)
    results.append(
        CheckResult(
            "equilibrium_radius", bool(eq.converged and slack >= -1e-10),
            float(slack), -1e-10,
            f"|phi|_H1={h1_norm(eq.phi):.6g} vs bound {radius.phi_bound:.6g}",
        )
    )
    worst = np.inf
    zero = constant_field(grid, 0.0)
    df0 = nemytskii(spec, zero, 1)
    for eps in (0.05, 0.1, 0.25, 0.5, 1.0):
        v, const = dominating_potential(d_field, eps, c_growth, gamma)
        worst = min(worst, float(np.min(v.values + const - df0.values)))
    results.append(
        CheckResult("dominating_potential_pointwise", worst >= -1e-12, float(worst),
                     -1e-12, "five sampled eps in (0, 1]")
    )
    return results


def run_verify_suite(
    grid,
    spec: NonlinearitySpec,
    A: SymmetricOperator,
    time_cfg: SemiflowConfig,
    spectral_cfg: SpectralConfig,
    table: ConstantsTable,
    rng: np.random.Generator,
    d_field: Field | None = None,
    q: float = 2.0,
    sigma: float = 2.0,
    c_growth: float = 6.0,
    gamma: float = 2.0,
    lambda0: float | None = None,
    Lambda0: float | None = None,
) -> list[CheckResult]:
    checks: list[CheckResult] = []
    checks.append(check_absorption(grid, table.m_b(), sigma, rng))
    checks.append(check_pair_contraction(grid, spec, A, time_cfg, rng))
    shifted = assemble_shifted_operator(
        A, nemytskii(spec, constant_field(grid, 0.0), 1), table.delta
    )
    checks.append(check_compression(shifted, spectral_cfg, rng))
    checks.append(check_kinetic_inequality(A, spectral_cfg, table, rng))
    if d_field is not None and lambda0 is not None and Lambda0 is not None:
        try:
            qprime = q / (q - 1.0)
            m_qp = table.sobolev(qprime)
            checks.extend(
                check_dissipative_radii(
                    grid, spec, A, d_field, q, lambda0, Lambda0, m_qp,
                    time_cfg, c_growth, gamma,
                )
            )
        except AttractorDimError as exc:
            checks.append(CheckResult("dissipative_radii", False, float("nan"),
                                      0.0, str(exc)))
    return checks
