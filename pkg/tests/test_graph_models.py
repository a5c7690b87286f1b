import numpy as np
import pytest

from spectral_consensus import (
    DegenerateModelError,
    IsolatedNodeError,
    NodeTransitivityViolation,
    SbmConfig,
    iteration_matrix,
    mean_spectrum,
    sample_sbm,
    scaling_gamma,
    variance_profile,
)
from spectral_consensus.graph_models import (
    expanded_variance_matrix,
    mean_adjacency,
    sample_sbm_with_retry,
)

PAPER = SbmConfig.two_level(6, 100, 0.05, 0.01)


class TestSampleSbm:
    def test_all_zero_theta_raises(self):
        cfg = SbmConfig.two_level(2, 3, 0.0, 0.0)
        with pytest.raises(IsolatedNodeError):
            sample_sbm(cfg, 0)

    def test_complete_graph(self):
        cfg = SbmConfig.two_level(1, 4, 1.0, 0.0)
        g = sample_sbm(cfg, 0)
        assert (g.out_degrees == 3).all()
        assert g.adjacency.sum() == 12
        assert not np.diagonal(g.adjacency).any()

    def test_deterministic_given_seed(self):
        a = sample_sbm(PAPER, 7)
        b = sample_sbm(PAPER, 7)
        assert (a.adjacency == b.adjacency).all()
        c = sample_sbm(PAPER, 8)
        assert (a.adjacency != c.adjacency).any()

    def test_mean_out_degree_paper_config(self):
        # closed form: 99*0.05 + 500*0.01 = 9.95
        means = []
        for seed in range(100):
            g = sample_sbm_with_retry(PAPER, seed)
            means.append(g.out_degrees.mean())
        assert abs(np.mean(means) - 9.95) <= 0.3

    def test_out_degrees_match_row_sums(self):
        g = sample_sbm(PAPER, 3)
        assert (g.out_degrees == g.adjacency.sum(axis=1)).all()

    def test_edge_directions_independent(self):
        # 2-node model: joint distribution of the two directed edges matches
        # the product distribution within 3 standard errors
        cfg = SbmConfig.two_level(1, 2, 0.0, 0.5)
        counts = np.zeros((2, 2))
        n = 10_000
        for seed in range(n):
            rngless = np.random.default_rng(seed)
            pop = cfg.populations()
            P = cfg.Theta[np.ix_(pop, pop)].copy()
            np.fill_diagonal(P, 0.0)
            A = (rngless.random((2, 2)) < P)
            counts[int(A[0, 1]), int(A[1, 0])] += 1
        freq = counts / n
        p01 = freq[1].sum()
        p10 = freq[:, 1].sum()
        se = 3 * np.sqrt(0.25 * 0.75 / n)
        assert abs(freq[1, 1] - p01 * p10) <= 3 * se

    def test_retry_helper_finds_graph(self):
        cfg = SbmConfig.two_level(2, 10, 0.15, 0.05)
        g = sample_sbm_with_retry(cfg, 0)
        assert (g.out_degrees > 0).all()

    def test_edge_list_export(self):
        g = sample_sbm(SbmConfig.two_level(1, 3, 1.0, 0.0), 0)
        text = g.to_edge_list()
        lines = text.strip().splitlines()
        assert lines[0] == "N 3"
        assert len(lines) == 1 + 6


class TestMeanAdjacency:
    def test_single_pair(self):
        cfg = SbmConfig(M=1, S=2, Theta=np.array([[0.3]]))
        dense = mean_adjacency(cfg).dense()
        assert np.allclose(dense, [[0.0, 0.3], [0.3, 0.0]])

    def test_paper_block_structure(self):
        dense = mean_adjacency(PAPER).dense()
        J = np.ones((100, 100))
        expected = np.kron(PAPER.Theta, J) - 0.05 * np.eye(600)
        assert np.allclose(dense, expected)

    def test_cross_population_entry(self):
        dense = mean_adjacency(PAPER).dense()
        assert dense[0, 100] == pytest.approx(0.01)


class TestMeanSpectrum:
    def test_paper_closed_form(self):
        spec = mean_spectrum(PAPER)
        by_eig = dict(zip(spec.eigenvalues, spec.multiplicities))
        assert set(np.round(spec.eigenvalues, 10)) == {9.95, 3.95, -0.05}
        assert by_eig[max(by_eig)] == 1
        assert spec.multiplicities.sum() == 600
        assert spec.distinct_count() == 3

    def test_matches_dense_eigensolver(self):
        # oracle: dense symmetric eigensolve of the expanded mean adjacency
        cfg = SbmConfig(M=3, S=40, Theta=np.array([
            [0.20, 0.05, 0.02],
            [0.05, 0.15, 0.03],
            [0.02, 0.03, 0.30]]))
        spec = mean_spectrum(cfg)
        expanded = np.repeat(spec.eigenvalues, spec.multiplicities)
        oracle = np.linalg.eigvalsh(mean_adjacency(cfg).dense())
        assert np.allclose(np.sort(expanded), np.sort(oracle), atol=1e-9)

    def test_complete_graph_expectation(self):
        cfg = SbmConfig(M=1, S=5, Theta=np.array([[0.4]]))
        spec = mean_spectrum(cfg)
        by_eig = dict(zip(np.round(spec.eigenvalues, 12), spec.multiplicities))
        assert by_eig[round(0.4 * 4, 12)] == 1
        assert by_eig[-0.4] == 4

    def test_scaled_top_eigenvalue_is_one(self):
        spec = mean_spectrum(PAPER, scaled=True)
        assert np.abs(spec.eigenvalues).max() == pytest.approx(1.0)


class TestScalingGamma:
    def test_paper_value(self):
        assert scaling_gamma(PAPER) == pytest.approx(9.95, abs=1e-12)

    def test_matches_dense_spectral_radius(self):
        cfg = SbmConfig(M=2, S=30, Theta=np.array([[0.3, 0.1], [0.1, 0.2]]))
        dense = mean_adjacency(cfg).dense()
        rho = np.abs(np.linalg.eigvalsh(dense)).max()
        assert scaling_gamma(cfg) == pytest.approx(rho, abs=1e-9)

    def test_complete_graph(self):
        cfg = SbmConfig.two_level(1, 4, 1.0, 0.0)
        assert scaling_gamma(cfg) == pytest.approx(3.0)

    def test_homogeneous_in_theta(self):
        cfg1 = SbmConfig.two_level(3, 10, 0.4, 0.2)
        cfg2 = SbmConfig.two_level(3, 10, 0.2, 0.1)
        assert scaling_gamma(cfg1) == pytest.approx(2 * scaling_gamma(cfg2),
                                                    rel=1e-14)

    def test_degenerate_model(self):
        cfg = SbmConfig.two_level(2, 3, 0.0, 0.0)
        with pytest.raises(DegenerateModelError):
            scaling_gamma(cfg)


class TestIterationMatrix:
    def test_alpha_zero_is_identity(self):
        g = sample_sbm(PAPER, 0)
        W = iteration_matrix(g, alpha=0.0)
        assert np.allclose(W.W, np.eye(600))

    def test_complete_graph_alpha_one(self):
        g = sample_sbm(SbmConfig.two_level(1, 3, 1.0, 0.0), 0)
        W = iteration_matrix(g, alpha=1.0).W
        assert np.allclose(np.diagonal(W), 0.0)
        off = W[~np.eye(3, dtype=bool)]
        assert np.allclose(off, 0.5)

    def test_rows_sum_to_one(self):
        for seed in range(5):
            g = sample_sbm(PAPER, seed)
            for alpha in (0.5, 1.0):
                W = iteration_matrix(g, alpha=alpha).W
                assert np.max(np.abs(W.sum(axis=1) - 1.0)) <= 1e-12

    def test_sparsity_respects_graph(self):
        g = sample_sbm(PAPER, 1)
        W = iteration_matrix(g, alpha=1.0).W
        offdiag = ~np.eye(600, dtype=bool)
        assert ((W != 0) & offdiag <= (g.adjacency > 0)).all()


class TestVarianceProfile:
    def test_paper_row_sum_closed_form(self):
        prof = variance_profile(PAPER)
        # 99*0.0475 + 500*0.0099
        assert prof.row_sum == pytest.approx(9.6525, abs=1e-12)

    def test_row_sum_matches_expanded_matrix(self):
        prof = variance_profile(PAPER)
        sigma2 = expanded_variance_matrix(PAPER)
        assert prof.row_sum == pytest.approx(sigma2[0].sum(), abs=1e-9)
        assert prof.row_sum == pytest.approx(sigma2[:, 0].sum(), abs=1e-9)

    def test_deterministic_graph_has_zero_variance(self):
        cfg = SbmConfig.two_level(2, 3, 1.0, 0.0)
        prof = variance_profile(cfg)
        assert prof.row_sum == 0.0
        assert (prof.block_variance == 0).all()

    def test_row_equals_col_sum(self):
        prof = variance_profile(PAPER)
        assert prof.row_sum == prof.col_sum

    def test_scaled_divides_by_gamma_squared(self):
        prof = variance_profile(PAPER, scaled=True)
        assert prof.row_sum == pytest.approx(9.6525 / 9.95 ** 2, rel=1e-12)

    def test_non_transitive_config_rejected(self):
        cfg = SbmConfig(M=2, S=5, Theta=np.array([[0.9, 0.1], [0.1, 0.2]]))
        with pytest.raises(NodeTransitivityViolation):
            variance_profile(cfg)


class TestSbmConfigValidation:
    def test_asymmetric_theta_rejected(self):
        with pytest.raises(Exception):
            SbmConfig(M=2, S=2, Theta=np.array([[0.5, 0.1], [0.2, 0.5]]))

    def test_out_of_range_theta_rejected(self):
        with pytest.raises(Exception):
            SbmConfig(M=1, S=2, Theta=np.array([[1.5]]))
