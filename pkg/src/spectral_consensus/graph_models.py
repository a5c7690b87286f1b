"""Directed stochastic block model: sampling, iteration matrices, and the
closed-form mean/variance structure used by the canonical-equation solvers.

The model has M equal populations of size S (N = M*S nodes).  Each ordered
pair of distinct nodes in populations p, q is connected independently with
probability Theta[p][q]; Theta is symmetric but the two directions of a pair
are drawn independently, so the adjacency matrix is not symmetric.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateModelError,
    InvalidInputError,
    IsolatedNodeError,
    NodeTransitivityViolation,
)

__all__ = [
    "SbmConfig",
    "DirectedGraph",
    "IterationMatrix",
    "VarianceProfile",
    "MeanSpectrum",
    "MeanAdjacency",
    "sample_sbm",
    "sample_sbm_with_retry",
    "mean_adjacency",
    "mean_spectrum",
    "scaling_gamma",
    "iteration_matrix",
    "variance_profile",
]


@dataclass(frozen=True)
class SbmConfig:
    M: int
    S: int
    Theta: np.ndarray
    alpha: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "Theta", np.asarray(self.Theta, dtype=float))
        if self.M < 1 or self.S < 1:
            raise InvalidInputError("M and S must be positive")
        if self.Theta.shape != (self.M, self.M):
            raise InvalidInputError(f"Theta must be {self.M}x{self.M}")
        if not np.allclose(self.Theta, self.Theta.T, atol=1e-14):
            raise InvalidInputError("Theta must be symmetric")
        if (self.Theta < 0).any() or (self.Theta > 1).any():
            raise InvalidInputError("Theta entries must lie in [0, 1]")

    @property
    def N(self) -> int:
        return self.M * self.S

    def populations(self) -> np.ndarray:
        """Population index of each node; nodes are grouped by population."""
        return np.repeat(np.arange(self.M), self.S)

    @classmethod
    def two_level(cls, M: int, S: int, theta_diag: float, theta_off: float,
                  alpha: float = 1.0) -> "SbmConfig":
        Theta = np.full((M, M), theta_off)
        np.fill_diagonal(Theta, theta_diag)
        return cls(M=M, S=S, Theta=Theta, alpha=alpha)


@dataclass
class DirectedGraph:
    N: int
    adjacency: np.ndarray         # (N, N) float 0/1, entry (i, j) = edge i -> j
    out_degrees: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        if self.adjacency.shape != (self.N, self.N):
            raise InvalidInputError("adjacency shape mismatch")
        if np.diagonal(self.adjacency).any():
            raise InvalidInputError("graph must have no self-loops")

    def to_edge_list(self) -> str:
        """Text export: header ``N <count>`` then one ``i j`` line per edge."""
        i, j = np.nonzero(self.adjacency)
        lines = [f"N {self.N}"]
        lines.extend(f"{a} {b}" for a, b in zip(i, j))
        return "\n".join(lines) + "\n"


@dataclass
class IterationMatrix:
    W: np.ndarray
    alpha: float

    @property
    def N(self) -> int:
        return self.W.shape[0]


@dataclass
class VarianceProfile:
    block_variance: np.ndarray    # (M, M), entry variance per population pair
    scaling: float                # divisor already applied (1 or gamma**2)
    row_sum: float                # common value of expanded-profile row sums
    col_sum: float


@dataclass
class MeanSpectrum:
    """Eigenvalues of the mean adjacency with multiplicities (sum = N)."""

    eigenvalues: np.ndarray
    multiplicities: np.ndarray

    def __post_init__(self):
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=float)
        self.multiplicities = np.asarray(self.multiplicities, dtype=int)
        if self.eigenvalues.shape != self.multiplicities.shape:
            raise InvalidInputError("eigenvalues/multiplicities mismatch")
        if (self.multiplicities < 1).any():
            raise InvalidInputError("multiplicities must be positive")

    @property
    def N(self) -> int:
        return int(self.multiplicities.sum())

    def distinct_count(self, tol: float = 1e-9) -> int:
        """Number of distinct eigenvalues (values closer than tol merge)."""
        vals = np.sort(self.eigenvalues)
        return int(1 + (np.diff(vals) > tol).sum()) if vals.size else 0

    def scaled(self, factor: float) -> "MeanSpectrum":
        return MeanSpectrum(self.eigenvalues / factor, self.multiplicities.copy())


@dataclass
class MeanAdjacency:
    """Block-compressed E[A]: Theta per population block, zero diagonal."""

    block: np.ndarray             # (M, M) block values (Theta)
    diag_correction: np.ndarray   # (M,) value subtracted on the diagonal
    M: int
    S: int

    def dense(self) -> np.ndarray:
        pop = np.repeat(np.arange(self.M), self.S)
        B = self.block[np.ix_(pop, pop)].copy()
        B[np.diag_indices_from(B)] -= self.diag_correction[pop]
        return B


def sample_sbm(config: SbmConfig, seed: int) -> DirectedGraph:
    """Draw one directed SBM realization; deterministic given the seed.

    Raises IsolatedNodeError when any node has out-degree zero, since the
    row-normalized iteration matrix is undefined there; callers retry with
    a fresh seed rather than mutating the sample.
    """
    rng = np.random.default_rng(seed)
    pop = config.populations()
    P = config.Theta[np.ix_(pop, pop)].copy()
    np.fill_diagonal(P, 0.0)
    adjacency = (rng.random((config.N, config.N)) < P).astype(float)
    out_degrees = adjacency.sum(axis=1).astype(int)
    if (out_degrees == 0).any():
        raise IsolatedNodeError(np.nonzero(out_degrees == 0)[0])
    return DirectedGraph(N=config.N, adjacency=adjacency,
                         out_degrees=out_degrees, seed=seed)


def sample_sbm_with_retry(config: SbmConfig, seed: int,
                          max_attempts: int = 100) -> DirectedGraph:
    """Retry sample_sbm over consecutive derived seeds on isolated nodes."""
    last = None
    for attempt in range(max_attempts):
        trial_seed = int(np.random.SeedSequence((seed, attempt)).generate_state(1)[0])
        try:
            return sample_sbm(config, trial_seed)
        except IsolatedNodeError as exc:
            last = exc
    raise IsolatedNodeError(last.nodes if last else [])


def mean_adjacency(config: SbmConfig) -> MeanAdjacency:
    """Expected adjacency in block form: Theta on blocks, zero diagonal."""
    return MeanAdjacency(block=config.Theta.copy(),
                         diag_correction=np.diagonal(config.Theta).copy(),
                         M=config.M, S=config.S)


def mean_spectrum(config: SbmConfig, scaled: bool = False) -> MeanSpectrum:
    """Closed-form spectrum of the expected adjacency.

    E[A] acts as S*Theta - diag(Theta_pp) on population-constant vectors and
    as -Theta_pp on the (S-1)-dimensional complement inside each population,
    so the full spectrum costs one M x M symmetric eigensolve.
    """
    Theta = config.Theta
    small = config.S * Theta - np.diag(np.diagonal(Theta))
    top = np.linalg.eigvalsh(small)
    eigs = list(top)
    mults = [1] * config.M
    if config.S > 1:
        for p in range(config.M):
            eigs.append(-Theta[p, p])
            mults.append(config.S - 1)
    eigs = np.asarray(eigs)
    mults = np.asarray(mults)
    # merge numerically equal values so multiplicities are meaningful
    order = np.argsort(eigs)
    eigs, mults = eigs[order], mults[order]
    merged_e, merged_m = [eigs[0]], [mults[0]]
    for e, m in zip(eigs[1:], mults[1:]):
        if abs(e - merged_e[-1]) <= 1e-12 * max(1.0, abs(e)):
            merged_m[-1] += m
        else:
            merged_e.append(e)
            merged_m.append(m)
    spec = MeanSpectrum(np.asarray(merged_e), np.asarray(merged_m))
    if scaled:
        spec = spec.scaled(scaling_gamma(config))
    return spec


def scaling_gamma(config: SbmConfig) -> float:
    """Spectral radius of E[A]; the adjacency scaling for the canonical solver."""
    if not (config.Theta > 0).any():
        raise DegenerateModelError("Theta has no positive entries")
    spec = mean_spectrum(config, scaled=False)
    return float(np.abs(spec.eigenvalues).max())


def iteration_matrix(graph: DirectedGraph, alpha: float = 1.0) -> IterationMatrix:
    """W = I - alpha*(I - D^{-1} A); rows sum to one for every alpha."""
    if (graph.out_degrees == 0).any():
        raise IsolatedNodeError(np.nonzero(graph.out_degrees == 0)[0])
    W = alpha * (graph.adjacency / graph.out_degrees[:, None])
    W[np.diag_indices_from(W)] += 1.0 - alpha
    return IterationMatrix(W=W, alpha=alpha)


def variance_profile(config: SbmConfig, scaled: bool = False) -> VarianceProfile:
    """Bernoulli entry variances per block, with the common row/column sum.

    The expanded-profile row sum for a node in population p is
    (S-1)*Sigma[p][p] + S*sum_{q != p} Sigma[p][q]; the scalar reduction of
    the canonical equations requires this to be the same for every p.
    """
    Sigma = config.Theta * (1.0 - config.Theta)
    scaling = 1.0
    if scaled:
        scaling = scaling_gamma(config) ** 2
        Sigma = Sigma / scaling
    row_sums = (config.S - 1) * np.diagonal(Sigma) + config.S * (
        Sigma.sum(axis=1) - np.diagonal(Sigma))
    col_sums = (config.S - 1) * np.diagonal(Sigma) + config.S * (
        Sigma.sum(axis=0) - np.diagonal(Sigma))
    ref = max(abs(row_sums).max(), 1e-30)
    if (np.ptp(row_sums) > 1e-12 * ref) or (np.ptp(col_sums) > 1e-12 * ref):
        raise NodeTransitivityViolation(
            f"variance row sums differ across populations: {row_sums}")
    if abs(row_sums[0] - col_sums[0]) > 1e-12 * ref:
        raise NodeTransitivityViolation(
            f"variance row sum {row_sums[0]} != column sum {col_sums[0]}")
    return VarianceProfile(block_variance=Sigma, scaling=scaling,
                           row_sum=float(row_sums[0]), col_sum=float(col_sums[0]))


def expanded_variance_matrix(config: SbmConfig, scaled: bool = False) -> np.ndarray:
    """Dense N x N entry-variance matrix (zero diagonal); oracle-scale helper."""
    profile = variance_profile(config, scaled=scaled)
    pop = config.populations()
    sigma2 = profile.block_variance[np.ix_(pop, pop)].copy()
    np.fill_diagonal(sigma2, 0.0)
    return sigma2
