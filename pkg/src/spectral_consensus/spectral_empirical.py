"""Ground-truth spectral computations on realized matrices.

Dense non-symmetric eigensolves, empirical spectral histograms, Monte-Carlo
averaging over graph realizations, the consensus projector, and spectral
convergence factors.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InvalidInputError,
    IsolatedNodeError,
    McFailure,
    NumericalFailure,
    PerronFailure,
)
from .graph_models import SbmConfig, iteration_matrix, sample_sbm
from .grids import DensityGrid, GridSpec

__all__ = [
    "SpectrumSample",
    "ConsensusProjector",
    "eigenvalues",
    "left_perron",
    "convergence_factor",
    "empirical_density",
    "expected_density_mc",
    "McReport",
]

CONSENSUS_TOL = 1e-8


@dataclass
class SpectrumSample:
    eigenvalues: np.ndarray       # complex, length N
    seed: int | None = None
    kind: str = "W"               # matrix kind tag ("W" or "Xi")

    @property
    def N(self) -> int:
        return self.eigenvalues.size

    def consensus_index(self) -> int | None:
        """Index of the unique eigenvalue within tolerance of 1, else None."""
        close = np.nonzero(np.abs(self.eigenvalues - 1.0) <= CONSENSUS_TOL)[0]
        if close.size != 1:
            return None
        return int(close[0])

    @property
    def consensus_ok(self) -> bool:
        return self.consensus_index() is not None

    def without_consensus(self) -> np.ndarray:
        """All eigenvalues except the one closest to 1."""
        idx = self.consensus_index()
        if idx is None:
            idx = int(np.argmin(np.abs(self.eigenvalues - 1.0)))
        return np.delete(self.eigenvalues, idx)


@dataclass
class ConsensusProjector:
    ell: np.ndarray               # left eigenvector, normalized ell @ 1 = 1
    residual: float

    @property
    def J(self) -> np.ndarray:
        return np.outer(np.ones(self.ell.size), self.ell)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.full_like(x, float(self.ell @ x))


def eigenvalues(matrix: np.ndarray, seed: int | None = None,
                kind: str = "W") -> SpectrumSample:
    """All eigenvalues of a dense real matrix (conjugate-paired for real input)."""
    matrix = np.asarray(matrix, dtype=float)
    n = matrix.shape[0]
    if matrix.shape != (n, n):
        raise InvalidInputError("matrix must be square")
    if n > 5000:
        raise InvalidInputError("dense eigensolver limited to N <= 5000")
    if not np.isfinite(matrix).all():
        raise InvalidInputError("matrix has non-finite entries")
    try:
        vals = np.linalg.eigvals(matrix)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigensolver failed: {exc}") from exc
    return SpectrumSample(eigenvalues=vals, seed=seed, kind=kind)


def left_perron(W: np.ndarray, tol: float = 1e-10,
                max_iter: int = 5000) -> ConsensusProjector:
    """Left eigenvector of W for eigenvalue 1, normalized to ell @ 1 = 1.

    Power iteration on the transpose, with a dense-eigendecomposition
    fallback when the iteration gives no contraction evidence (tiny
    subdominant gap, or eigenvalue 1 not simple).  A deflated probe after
    convergence rejects matrices whose second eigenvalue sits on the unit
    circle (disconnected or periodic structure).
    """
    W = getattr(W, "W", W)
    W = np.asarray(W, dtype=float)
    n = W.shape[0]
    v = np.full(n, 1.0 / n)
    converged = False
    for it in range(max_iter):
        v_new = W.T @ v
        total = v_new.sum()
        if abs(total) < 1e-300:
            break
        v_new = v_new / total
        if float(np.max(np.abs(v_new - v))) < 0.1 * tol:
            v = v_new
            converged = True
            break
        v = v_new
    if converged:
        residual = float(np.max(np.abs(v @ W - v)))
        if residual <= tol and _subdominant_contracts(W, v):
            return ConsensusProjector(ell=v, residual=residual)
    return _left_perron_dense(W, tol)


def _subdominant_contracts(W: np.ndarray, ell: np.ndarray,
                           steps: int = 100) -> bool:
    """Probe rho(W - J) < 1 by powering a deflated vector.

    The estimate is the per-step growth factor once the normalized iteration
    settles, so matrices whose second eigenvalue sits essentially on the
    unit circle (W = I, disconnected graphs) are rejected.
    """
    n = W.shape[0]
    rng = np.random.default_rng(0)
    x = rng.standard_normal(n)
    x = x - (ell @ x) * np.ones(n)      # remove the consensus component
    norm0 = np.linalg.norm(x)
    if norm0 == 0:
        return True
    x = x / norm0
    growth = 0.0
    for _ in range(steps):
        x = W @ x - (ell @ x) * np.ones(n)
        growth = np.linalg.norm(x)
        if growth < 1e-290:
            return True
        x = x / growth
    return growth < 1.0 - 1e-6


def _left_perron_dense(W: np.ndarray, tol: float) -> ConsensusProjector:
    """Fallback: full transpose eigendecomposition with simplicity check."""
    try:
        vals, vecs = np.linalg.eig(W.T)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigensolver failed: {exc}") from exc
    near_one = np.nonzero(np.abs(vals - 1.0) <= 1e-6)[0]
    if near_one.size != 1:
        raise PerronFailure(
            f"eigenvalue 1 has multiplicity {near_one.size}; no unique "
            "consensus projector")
    v = np.real(vecs[:, near_one[0]])
    total = v.sum()
    if abs(total) < 1e-300:
        raise PerronFailure("left eigenvector has zero sum")
    v = v / total
    residual = float(np.max(np.abs(v @ W - v)))
    if residual > max(tol, 1e-8):
        raise PerronFailure(f"left eigenvector residual {residual:g}")
    if not _subdominant_contracts(W, v):
        raise PerronFailure("second eigenvalue sits on the unit circle")
    return ConsensusProjector(ell=v, residual=residual)


def convergence_factor(W: np.ndarray, projector: ConsensusProjector,
                       filt=None) -> float:
    """Per-iteration decay rate (1/d) * ln rho(p(W) - J).

    Computed spectrally: evaluate the filter polynomial at each eigenvalue,
    drop the consensus eigenvalue's image, and take the max modulus.  With
    no filter this is ln of the subdominant spectral radius.
    """
    W = getattr(W, "W", W)
    sample = eigenvalues(W)
    return per_iteration_rate_from_sample(sample, filt)


def per_iteration_rate_from_sample(sample: SpectrumSample, filt=None) -> float:
    rest = sample.without_consensus()
    if filt is None:
        vals = rest
        d = 1
    else:
        vals = np.polyval(np.asarray(filt.coefficients)[::-1], rest)
        d = filt.degree
    top = float(np.max(np.abs(vals))) if vals.size else 0.0
    if top <= 0.0:
        return -np.inf
    return float(np.log(top) / d)


def empirical_density(sample: SpectrumSample, grid: GridSpec) -> DensityGrid:
    """Binned empirical spectral density; out-of-grid mass goes to a reported
    overflow bucket rather than aborting."""
    t_nodes = grid.t_nodes()
    s_nodes = grid.s_nodes()
    dt, ds = grid.dt, grid.ds
    x = sample.eigenvalues.real
    y = sample.eigenvalues.imag
    ti = np.round((x - t_nodes[0]) / dt).astype(int)
    si = np.round((y - s_nodes[0]) / ds).astype(int)
    in_range = (ti >= 0) & (ti < grid.n_t) & (si >= 0) & (si < grid.n_s)
    counts = np.zeros((grid.n_t, grid.n_s))
    np.add.at(counts, (ti[in_range], si[in_range]), 1.0)
    values = counts / (sample.N * grid.cell_area)
    out = DensityGrid(t=t_nodes, s=s_nodes, values=values)
    overflow = int((~in_range).sum())
    out.meta = {
        "overflow_count": overflow,
        "in_range_fraction": 1.0 - overflow / sample.N,
        "n_eigenvalues": sample.N,
    }
    return out


@dataclass
class McReport:
    trials: list = field(default_factory=list)   # per-trial dicts
    failed: int = 0

    def connected_fraction(self) -> float:
        if not self.trials:
            return 0.0
        return sum(t["connected"] for t in self.trials) / len(self.trials)


def expected_density_mc(config: SbmConfig, trials: int, grid: GridSpec,
                        base_seed: int, threads: int = 1,
                        exclude_disconnected: bool = False,
                        max_attempts: int = 100,
                        collect_eigenvalues: bool = False):
    """Average empirical density of W over independently drawn graphs.

    Per-trial seeds derive deterministically from (base_seed, trial,
    attempt), so the output does not depend on worker count or on the order
    in which trials finish.  Trials whose graph cannot be sampled within
    ``max_attempts`` seeds count as failed; more than 5% failures aborts.

    Returns (DensityGrid, McReport); the report carries per-trial seeds,
    connectivity flags, subdominant radii, and overflow counts.
    """
    if trials < 1:
        raise InvalidInputError("need at least one trial")

    def one_trial(k: int):
        graph = None
        for attempt in range(max_attempts):
            seed = int(np.random.SeedSequence((base_seed, k, attempt))
                       .generate_state(1)[0])
            try:
                graph = sample_sbm(config, seed)
                break
            except IsolatedNodeError:
                continue
        if graph is None:
            return None
        W = iteration_matrix(graph, config.alpha)
        sample = eigenvalues(W.W, seed=graph.seed)
        rest = np.abs(sample.without_consensus())
        rho_sub = float(rest.max()) if rest.size else 0.0
        connected = sample.consensus_ok and rho_sub < 1.0 - 1e-10
        dens = empirical_density(sample, grid)
        return {
            "trial": k,
            "seed": graph.seed,
            "connected": bool(connected),
            "rho_subdominant": rho_sub,
            "overflow": dens.meta["overflow_count"],
            "values": dens.values,
            "eigenvalues": sample.eigenvalues if collect_eigenvalues else None,
        }

    threads = max(1, int(threads))
    indices = list(range(trials))
    if threads == 1:
        raw = [one_trial(k) for k in indices]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            raw = list(pool.map(one_trial, indices))

    report = McReport()
    stack = []
    for k, res in enumerate(raw):
        if res is None:
            report.failed += 1
            continue
        if exclude_disconnected and not res["connected"]:
            report.failed += 0  # excluded but not a failure
            report.trials.append({k2: v for k2, v in res.items()
                                  if k2 not in ("values", "eigenvalues")}
                                 | {"excluded": True})
            continue
        stack.append(res["values"])
        report.trials.append({k2: v for k2, v in res.items()
                              if k2 not in ("values", "eigenvalues")}
                             | {"excluded": False})
    if report.failed > 0.05 * trials:
        raise McFailure(f"{report.failed}/{trials} trials failed")
    if not stack:
        raise McFailure("no usable trials")
    mean_values = np.sum(np.stack(stack, axis=0), axis=0) / len(stack)
    out = DensityGrid(t=grid.t_nodes(), s=grid.s_nodes(), values=mean_values)
    out.meta = {
        "trials_used": len(stack),
        "trials_requested": trials,
        "failed": report.failed,
        "connected_fraction": report.connected_fraction(),
        "base_seed": base_seed,
    }
    if collect_eigenvalues:
        pool_eigs = [r["eigenvalues"] for r in raw if r is not None
                     and r["eigenvalues"] is not None]
        return out, report, pool_eigs
    return out, report
