import math

import numpy as np
import pytest

import attractordim as ad
from attractordim.errors import BlowUpError, DomainError
from attractordim.semiflow import antiderivative_integral
from attractordim.spectral import SpectralConfig


def unit_grid(n=4):
    return ad.build_grid([(0, 1), (0, 1), (0, 1)], (n, n, n))


def zero_spec():
    return ad.NonlinearitySpec(
        value=lambda x, y, z, u: 0.0 * u,
        du=lambda x, y, z, u: 0.0 * u,
        duu=lambda x, y, z, u: 0.0 * u,
        growth_c=1.0,
        growth_gamma=2.0,
    )


def cubic_spec(sign=-1.0):
    return ad.NonlinearitySpec(
        value=lambda x, y, z, u: sign * u**3,
        du=lambda x, y, z, u: sign * 3 * u**2,
        duu=lambda x, y, z, u: sign * 6 * u,
        growth_c=6.0,
        growth_gamma=2.0,
    )


@pytest.fixture(scope="module")
def setup():
    g = unit_grid(4)
    A = ad.assemble_operator(g, ad.constant_field(g, 0.0))
    vals, vecs = ad.lowest_eigs(A, SpectralConfig(3, "dense-oracle"))
    return g, A, vals, vecs


class TestStep:
    def test_contraction_for_zero_reaction(self, setup):
        g, A, _, _ = setup
        rng = np.random.default_rng(0)
        u = ad.Field(g, rng.standard_normal(g.dof))
        up = ad.step(u, zero_spec(), A, 1e-2)
        assert ad.l2_norm(up) <= ad.l2_norm(u)

    def test_zero_fixed_point(self, setup):
        g, A, _, _ = setup
        u0 = ad.constant_field(g, 0.0)
        up = ad.step(u0, cubic_spec(), A, 1e-2)
        assert ad.l2_norm(up) == 0.0

    def test_exact_decay_on_eigenvector(self, setup):
        g, A, vals, vecs = setup
        dt, lam = 1e-3, vals[0]
        u = ad.Field(g, vecs[:, 0])
        up = ad.step(u, zero_spec(), A, dt)
        assert np.allclose(up.values, u.values / (1 + dt * lam), atol=1e-13)

    def test_dt_guard(self, setup):
        g, A, _, _ = setup
        with pytest.raises(DomainError):
            ad.step(ad.constant_field(g, 1.0), zero_spec(), A, 0.0)


class TestEvolve:
    def test_l2_monotone_for_zero_reaction(self, setup):
        g, A, _, _ = setup
        rng = np.random.default_rng(1)
        u0 = ad.Field(g, rng.standard_normal(g.dof))
        cfg = ad.SemiflowConfig(dt=1e-3, t_end=0.02)
        traj = ad.evolve(u0, cfg, zero_spec(), A)
        norms = [ad.l2_norm(s) for s in traj.states]
        assert all(b <= a + 1e-15 for a, b in zip(norms, norms[1:]))

    def test_first_order_richardson(self, setup):
        # dt halving roughly halves the error against the resolved solution
        g, A, vals, vecs = setup
        u0 = ad.Field(g, vecs[:, 0])
        t_end, lam = 0.05, vals[0]
        exact = math.exp(-lam * t_end)

        def final_err(dt):
            cfg = ad.SemiflowConfig(dt=dt, t_end=t_end)
            traj = ad.evolve(u0, cfg, zero_spec(), A)
            n = int(round(t_end / dt))
            return abs((1 + dt * lam) ** (-n) - exact), traj

        e1, traj1 = final_err(1e-3)
        e2, traj2 = final_err(5e-4)
        # numeric trajectory matches the rational recursion exactly
        assert np.allclose(
            traj1.states[-1].values, (1 + 1e-3 * lam) ** (-50) * u0.values,
            atol=1e-12,
        )
        assert 1.7 <= e1 / e2 <= 2.3

    def test_energy_dissipation_for_zero_reaction(self, setup):
        g, A, _, _ = setup
        rng = np.random.default_rng(2)
        u0 = ad.Field(g, rng.standard_normal(g.dof))
        cfg = ad.SemiflowConfig(dt=2e-3, t_end=0.02)
        traj = ad.evolve(u0, cfg, zero_spec(), A)
        energies = [A.form(s, s) for s in traj.states]
        for a, b in zip(energies, energies[1:]):
            assert b <= a * (1 + 1e-12)

    def test_blow_up_reports_last_finite_time(self, setup):
        g, A, _, _ = setup
        u0 = ad.constant_field(g, 50.0)
        cfg = ad.SemiflowConfig(dt=0.5, t_end=10.0, blowup_threshold=1e6)
        with pytest.raises(BlowUpError) as err:
            ad.evolve(u0, cfg, cubic_spec(sign=+1.0), A)
        assert 0.0 <= err.value.time < 10.0
        assert err.value.norm > 1e6 or not math.isfinite(err.value.norm)

    def test_snapshot_stride(self, setup):
        g, A, _, _ = setup
        u0 = ad.constant_field(g, 1.0)
        cfg = ad.SemiflowConfig(dt=1e-3, t_end=0.01, snapshot_stride=5)
        traj = ad.evolve(u0, cfg, zero_spec(), A)
        assert list(traj.times) == pytest.approx([0.0, 0.005, 0.01])


class TestEquilibrium:
    def test_zero_reaction_zero_guess(self, setup):
        g, A, _, _ = setup
        cfg = ad.SemiflowConfig(dt=1e-3, t_end=0.01)
        res = ad.find_equilibrium(ad.constant_field(g, 0.0), zero_spec(), A, cfg)
        assert res.converged
        assert res.residual_norm == 0.0
        assert ad.l2_norm(res.phi) == 0.0

    def test_source_matches_dense_solve(self, setup):
        g, A, _, _ = setup
        rng = np.random.default_rng(3)
        gvals = rng.standard_normal(g.dof)
        src = ad.NonlinearitySpec(
            value=lambda x, y, z, u: gvals,
            du=lambda x, y, z, u: 0.0 * u,
            duu=lambda x, y, z, u: 0.0 * u,
            growth_c=1.0,
            growth_gamma=2.0,
        )
        cfg = ad.SemiflowConfig(dt=1e-3, t_end=0.01)
        res = ad.find_equilibrium(ad.constant_field(g, 0.0), src, A, cfg)
        import scipy.linalg as la

        dense = la.solve(A.matrix.toarray(), gvals)
        assert res.converged
        assert np.max(np.abs(res.phi.values - dense)) <= 1e-9

    def test_cubic_zero_equilibrium(self, setup):
        g, A, _, _ = setup
        cfg = ad.SemiflowConfig(dt=1e-3, t_end=0.01)
        res = ad.find_equilibrium(ad.constant_field(g, 0.0), cubic_spec(), A, cfg)
        assert res.converged and ad.l2_norm(res.phi) == 0.0

    def test_equilibrium_is_step_fixed_point(self, setup):
        g, A, _, _ = setup
        x, y, z = g.node_coordinates()
        gfun = 0.3 * np.sin(np.pi * x) * np.sin(np.pi * y) * np.sin(np.pi * z)
        src = ad.NonlinearitySpec(
            value=lambda xx, yy, zz, u: 0.3 * np.sin(np.pi * xx)
            * np.sin(np.pi * yy) * np.sin(np.pi * zz) - u**3,
            du=lambda xx, yy, zz, u: -3 * u**2,
            duu=lambda xx, yy, zz, u: -6 * u,
            growth_c=6.0,
            growth_gamma=2.0,
        )
        cfg = ad.SemiflowConfig(dt=1e-2, t_end=0.1, newton_tol=1e-12)
        res = ad.find_equilibrium(ad.constant_field(g, 0.0), src, A, cfg)
        assert res.converged
        moved = ad.step(res.phi, src, A, 1e-2)
        assert ad.l2_norm(ad.Field(g, moved.values - res.phi.values)) <= 1e-9

    def test_exhaustion_returns_unconverged(self, setup):
        g, A, _, _ = setup
        x, y, z = g.node_coordinates()
        src = ad.NonlinearitySpec(
            value=lambda xx, yy, zz, u: np.sin(np.pi * xx) - u**3,
            du=lambda xx, yy, zz, u: -3 * u**2,
            duu=lambda xx, yy, zz, u: -6 * u,
            growth_c=6.0,
            growth_gamma=2.0,
        )
        cfg = ad.SemiflowConfig(dt=1e-3, t_end=0.01, newton_tol=1e-16,
                                newton_max_iter=1)
        res = ad.find_equilibrium(ad.constant_field(g, 0.0), src, A, cfg)
        assert not res.converged
        assert res.residual_norm > 0


class TestLyapunovValue:
    def test_zero_state(self, setup):
        g, A, _, _ = setup
        assert ad.lyapunov_value(ad.constant_field(g, 0.0), cubic_spec(), A) == 0.0

    def test_zero_reaction_is_form_energy(self, setup):
        g, A, _, _ = setup
        rng = np.random.default_rng(4)
        u = ad.Field(g, rng.standard_normal(g.dof))
        val = ad.lyapunov_value(u, zero_spec(), A)
        assert val == pytest.approx(A.form(u, u))
        assert val >= 0

    def test_antiderivative_quadrature_matches_closed_form(self, setup):
        g, A, _, _ = setup
        u = ad.constant_field(g, 1.5)
        got = antiderivative_integral(cubic_spec(), u)
        # F(u) = -u^4/4 for the cubic sink
        expected = -(1.5**4) / 4 * g.dof * g.cell_volume
        assert got == pytest.approx(expected, abs=1e-9)

    def test_nonincreasing_along_flow(self, setup):
        g, A, _, _ = setup
        x, y, z = g.node_coordinates()
        u0 = ad.Field(g, np.sin(np.pi * x) * np.sin(np.pi * y) * np.sin(np.pi * z))
        cfg = ad.SemiflowConfig(dt=1e-3, t_end=0.02, snapshot_stride=4)
        traj = ad.evolve(u0, cfg, cubic_spec(), A)
        vals = [ad.lyapunov_value(s, cubic_spec(), A) for s in traj.states]
        for a, b in zip(vals, vals[1:]):
            assert b <= a * (1 + 1e-12) + 1e-12


class TestPairDiagnostics:
    def test_pure_contraction_nonpositive_rate(self, setup):
        g, A, _, _ = setup
        rng = np.random.default_rng(5)
        u0 = ad.Field(g, rng.standard_normal(g.dof))
        v0 = ad.Field(g, rng.standard_normal(g.dof))
        cfg = ad.SemiflowConfig(dt=1e-3, t_end=0.05)
        diag = ad.pair_diagnostics(u0, v0, cfg, zero_spec(), A)
        assert diag.k_fit <= 0.0
        assert diag.max_violation <= 1e-10

    def test_scaled_pair_dissipative(self, setup):
        g, A, _, _ = setup
        x, y, z = g.node_coordinates()
        u0 = ad.Field(g, 0.6 * np.sin(np.pi * x) * np.sin(np.pi * y) * np.sin(np.pi * z))
        v0 = ad.Field(g, u0.values * (1 + 1e-6))
        cfg = ad.SemiflowConfig(dt=1e-3, t_end=0.05)
        diag = ad.pair_diagnostics(u0, v0, cfg, cubic_spec(), A)
        assert math.isfinite(diag.k_fit)
        assert diag.max_violation <= 1e-10

    def test_smoothing_fit_finite_for_rough_difference(self, setup):
        g, A, _, _ = setup
        rng = np.random.default_rng(6)
        u0 = ad.Field(g, 0.1 * rng.standard_normal(g.dof))
        v0 = ad.Field(g, u0.values + 0.05 * rng.standard_normal(g.dof))
        cfg = ad.SemiflowConfig(dt=1e-3, t_end=0.05, alpha=0.25)
        diag = ad.pair_diagnostics(u0, v0, cfg, cubic_spec(), A)
        assert math.isfinite(diag.smoothing_fit)
        assert diag.smoothing_fit > 0

    def test_identical_inputs_rejected(self, setup):
        g, A, _, _ = setup
        u0 = ad.constant_field(g, 1.0)
        cfg = ad.SemiflowConfig(dt=1e-3, t_end=0.01)
        with pytest.raises(DomainError):
            ad.pair_diagnostics(u0, u0, cfg, zero_spec(), A)
