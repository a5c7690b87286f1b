import numpy as np
import pytest

from spectral_consensus import (
    Filter,
    GridSpec,
    RateUndefinedError,
    SbmConfig,
    error_trajectory,
    estimate_rate,
    eigenvalues,
    iteration_matrix,
    left_perron,
    run_consensus,
)
from spectral_consensus.consensus_sim import compare_filters, mean_iteration_eigenvalues
from spectral_consensus.errors import InvalidInputError
from spectral_consensus.graph_models import sample_sbm_with_retry


def random_row_stochastic(n, seed):
    rng = np.random.default_rng(seed)
    W = rng.random((n, n)) + 0.05
    return W / W.sum(axis=1, keepdims=True)


class TestRunConsensus:
    def test_identity_matrix_constant(self):
        x0 = np.arange(5.0)
        traj = run_consensus(np.eye(5), x0, None, 7)
        assert (traj.states == x0[None, :]).all()
        assert traj.states.shape == (8, 5)

    def test_identity_filter_equals_unfiltered(self):
        W = random_row_stochastic(12, 0)
        x0 = np.random.default_rng(1).normal(size=12)
        ident = Filter(degree=1, coefficients=np.array([0.0, 1.0]),
                       achieved_epsilon=float("nan"))
        a = run_consensus(W, x0, ident, 9)
        b = run_consensus(W, x0, None, 9)
        assert np.allclose(a.states, b.states, atol=1e-14)

    def test_window_equals_matrix_polynomial(self):
        W = random_row_stochastic(20, 2)
        x0 = np.random.default_rng(3).normal(size=20)
        filt = Filter(degree=3, coefficients=np.array([0.1, 0.2, 0.3, 0.4]),
                      achieved_epsilon=float("nan"))
        a = run_consensus(W, x0, filt, 12, mode="window")
        b = run_consensus(W, x0, filt, 12, mode="matrix")
        assert np.max(np.abs(a.states - b.states)) <= 1e-12

    def test_filtered_window_is_polynomial_of_state(self):
        W = random_row_stochastic(10, 4)
        x0 = np.random.default_rng(5).normal(size=10)
        filt = Filter(degree=2, coefficients=np.array([0.25, 0.25, 0.5]),
                      achieved_epsilon=float("nan"))
        traj = run_consensus(W, x0, filt, 2)
        pW = 0.25 * np.eye(10) + 0.25 * W + 0.5 * W @ W
        assert np.allclose(traj.states[2], pW @ x0, atol=1e-13)

    def test_iteration_count_multiple_of_degree(self):
        W = random_row_stochastic(6, 6)
        filt = Filter(degree=4, coefficients=np.full(5, 0.2),
                      achieved_epsilon=float("nan"))
        with pytest.raises(InvalidInputError):
            run_consensus(W, np.zeros(6), filt, 10)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInputError):
            run_consensus(np.eye(4), np.zeros(5), None, 3)


class TestErrorTrajectory:
    def test_consensus_start_stays_at_floor(self):
        W = random_row_stochastic(8, 7)
        proj = left_perron(W)
        traj = run_consensus(W, np.ones(8), None, 20)
        errs = error_trajectory(traj, proj)
        assert (errs <= 1e-12).all()

    def test_perturbed_start_decays(self):
        W = random_row_stochastic(8, 8)
        proj = left_perron(W)
        rng = np.random.default_rng(9)
        x0 = np.ones(8) + rng.normal(size=8)
        traj = run_consensus(W, x0, None, 40)
        errs = error_trajectory(traj, proj)
        assert errs[0] > 0
        assert errs[-1] < errs[0] * 1e-3


class TestEstimateRate:
    def test_exact_geometric(self):
        errs = 0.5 ** np.arange(30)
        assert estimate_rate(errs) == pytest.approx(np.log(0.5), abs=1e-12)

    def test_constant_errors(self):
        errs = np.full(25, 0.3)
        assert estimate_rate(errs) == pytest.approx(0.0, abs=1e-12)

    def test_floor_trajectory_undefined(self):
        errs = np.full(20, 1e-15)
        with pytest.raises(RateUndefinedError):
            estimate_rate(errs)

    def test_too_few_samples(self):
        with pytest.raises(InvalidInputError):
            estimate_rate([1.0, 0.5])

    def test_known_spectral_factor(self):
        # symmetric stochastic matrix with subdominant eigenvalue 0.4
        n = 10
        rng = np.random.default_rng(11)
        Q = np.linalg.qr(np.column_stack(
            [np.ones(n) / np.sqrt(n), rng.normal(size=(n, n - 1))]))[0]
        lam = np.array([1.0, 0.4] + [0.05] * (n - 2))
        W = Q @ np.diag(lam) @ Q.T
        proj = left_perron(W)
        x0 = np.ones(n) + Q[:, 1]      # excite the subdominant mode
        traj = run_consensus(W, x0, None, 60)
        rate = estimate_rate(error_trajectory(traj, proj))
        assert rate == pytest.approx(np.log(0.4), abs=0.05)


class TestConsensusPreservation:
    def test_weighted_average_constant_with_filter(self):
        cfg = SbmConfig.two_level(2, 20, 0.3, 0.1)
        g = sample_sbm_with_retry(cfg, 0)
        W = iteration_matrix(g, 1.0)
        proj = left_perron(W.W)
        filt = Filter(degree=2, coefficients=np.array([-0.2, 0.5, 0.7]),
                      achieved_epsilon=float("nan"))
        rng = np.random.default_rng(13)
        x0 = np.ones(40) + rng.normal(size=40)
        traj = run_consensus(W.W, x0, filt, 20)
        avg = traj.states @ proj.ell
        assert np.max(np.abs(avg - avg[0])) <= 1e-10


class TestCompareFilters:
    CFG = SbmConfig.two_level(2, 30, 0.25, 0.1)

    def _density(self):
        from spectral_consensus.cli import girko_w_density, RunConfig

        grid = GridSpec(-0.8, 1.1, 41, -0.7, 0.7, 41, n_u=48)
        rc = RunConfig(model=self.CFG, grid=grid)
        return girko_w_density(rc, deflate_consensus=True)

    def test_table_structure_and_ordering(self):
        dens = self._density()
        table = compare_filters(self.CFG, dens, kappa=1e-2, tau=1e-4,
                                degrees=(1, 2), trials=4, base_seed=5,
                                design_tol=1e-6)
        kinds = {r.filter_kind for r in table.rows}
        assert kinds == {"trivial", "mean_spectrum", "proposed", "oracle"}
        # trivial row is degree-independent
        t1 = table.row("trivial", 1).mean_rate
        t2 = table.row("trivial", 2).mean_rate
        assert t1 == pytest.approx(t2, abs=1e-12)
        # oracle optimizes the evaluation set directly
        for d in (1, 2):
            assert (table.row("oracle", d).mean_rate
                    <= table.row("proposed", d).mean_rate + 1e-9)

    def test_mean_spectrum_rows_limited_by_k(self):
        dens = self._density()
        K = len(mean_iteration_eigenvalues(self.CFG))
        table = compare_filters(self.CFG, dens, kappa=1e-2, tau=1e-4,
                                degrees=(1, 2, 3), trials=2, base_seed=1,
                                design_tol=1e-6)
        for d in (1, 2, 3):
            row = table.row("mean_spectrum", d)
            if d <= K - 1:
                assert row is not None
            else:
                assert row is None

    def test_deterministic_across_threads(self):
        dens = self._density()
        kw = dict(kappa=1e-2, tau=1e-4, degrees=(1, 2), trials=4,
                  base_seed=3, design_tol=1e-6)
        t1 = compare_filters(self.CFG, dens, threads=1, **kw)
        t2 = compare_filters(self.CFG, dens, threads=3, **kw)
        assert t1.to_csv() == t2.to_csv()

    def test_single_trial_zero_std(self):
        dens = self._density()
        table = compare_filters(self.CFG, dens, kappa=1e-2, tau=1e-4,
                                degrees=(1,), trials=1, base_seed=0,
                                design_tol=1e-6)
        for row in table.rows:
            assert row.std_rate == 0.0
            assert row.trials == 1


class TestMeanIterationEigenvalues:
    def test_paper_config_values(self):
        cfg = SbmConfig.two_level(6, 100, 0.05, 0.01)
        lam = mean_iteration_eigenvalues(cfg)
        assert len(lam) == 3
        assert lam[-1] == pytest.approx(1.0)
        assert lam[1] == pytest.approx(3.95 / 9.95, abs=1e-12)
        assert lam[0] == pytest.approx(-0.05 / 9.95, abs=1e-12)

    def test_alpha_scaling(self):
        cfg = SbmConfig.two_level(6, 100, 0.05, 0.01, alpha=0.5)
        lam = mean_iteration_eigenvalues(cfg)
        assert lam[-1] == pytest.approx(1.0)
        assert lam[1] == pytest.approx(1 - 0.5 + 0.5 * 3.95 / 9.95, abs=1e-12)
