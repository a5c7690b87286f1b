"""Stochastic canonical equations for non-Hermitian random-matrix densities.

Two solver paths produce the deterministic approximation of the empirical
spectral density of a random matrix Xi with mean B and entry variances
sigma2:

* the scalar-reduced path, valid for node-transitive models, which only
  needs the mean-matrix spectrum and the common variance row sum; and
* the general path, which iterates the full 2N-equation diagonal system
  and serves as the oracle for the reduction at small N.

Both solve, at each point (u, t, s), a positive fixed point (c1, c2) (or
diagonal vectors C1, C2), then the density at (t, s) is recovered as

    f(t, s) = -1/(4*pi) * integral_beta^umax  laplacian_{t,s} m(u, t, s) du

with the Laplacian taken by centered finite differences on the evaluation
grid and the u-integral by the trapezoid rule in log-u.  The integrand
decays like 1/u**2, so the truncated tail is reported as a bound instead
of being added.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import (
    CoverageError,
    DensityFailure,
    InvalidInputError,
    NonConvergenceError,
)
from .graph_models import MeanSpectrum
from .grids import DensityGrid, GridSpec

__all__ = [
    "CanonicalSolution",
    "ScalarModel",
    "GeneralModel",
    "solve_scalar_ce",
    "solve_general_ce",
    "compute_m",
    "integrate_density",
    "map_xi_density_to_w",
]

_TINY = 1e-300


@dataclass
class CanonicalSolution:
    """Converged (c1, c2) pair, or diagonal (C1, C2) vectors, at one (u, t, s)."""

    iterations_used: int
    residual: float
    u: float
    c1: float | None = None
    c2: float | None = None
    C1_diag: np.ndarray | None = None
    C2_diag: np.ndarray | None = None
    clamped: bool = False

    @property
    def is_scalar(self) -> bool:
        return self.c1 is not None


@dataclass(frozen=True)
class ScalarModel:
    """Node-transitive model: mean spectrum plus common variance row sum."""

    spectrum: MeanSpectrum
    row_var: float


@dataclass(frozen=True)
class GeneralModel:
    """Explicit mean matrix and entry-variance matrix (oracle scale, N <= 500)."""

    B: np.ndarray
    sigma2: np.ndarray


# ---------------------------------------------------------------------------
# scalar path
# ---------------------------------------------------------------------------

def _scalar_sweep(q, mults, row_var, N, u, c1, c2, tol, max_iter):
    """Vectorized alternating substitution at one u over an array of cells.

    q has shape (K,) + cell_shape and holds (lam_k - t)^2 + s^2 per distinct
    mean eigenvalue; c1 and c2 are updated in place.  Each cell iterates on
    its own history only (per-cell stopping, per-cell damping), so results
    are independent of how cells are chunked across workers.

    Returns (iterations, residual, converged, clamped) arrays per cell.
    """
    mu = mults.reshape((-1,) + (1,) * c1.ndim)
    scale = row_var / N
    shape = c1.shape
    active = np.ones(shape, dtype=bool)
    damp = np.zeros(shape, dtype=bool)
    prev_sign = np.zeros(shape, dtype=np.int8)
    flips = np.zeros(shape, dtype=np.int8)
    iters = np.zeros(shape, dtype=np.int64)
    resid = np.full(shape, np.inf)
    clamped = np.zeros(shape, dtype=bool)
    for _ in range(max_iter):
        c1n = u + scale * np.sum(mu / (c2[None] + q / c1[None]), axis=0)
        c2n = 1.0 + scale * np.sum(mu / (c1n[None] + q / c2[None]), axis=0)
        bad = (c1n <= 0) | (c2n <= 0)
        if bad.any():
            c1n = np.where(c1n <= 0, _TINY, c1n)
            c2n = np.where(c2n <= 0, _TINY, c2n)
            clamped |= bad & active
        # oscillation bookkeeping on the c1 update sign
        sign = np.sign(c1n - c1).astype(np.int8)
        flipped = (sign != 0) & (prev_sign != 0) & (sign != prev_sign)
        flips = np.where(flipped, flips + 1, 0).astype(np.int8)
        damp |= flips >= 2
        prev_sign = sign
        step1 = np.where(damp, 0.5 * (c1n - c1), c1n - c1)
        step2 = np.where(damp, 0.5 * (c2n - c2), c2n - c2)
        new1 = c1 + step1
        new2 = c2 + step2
        r = np.maximum(np.abs(new1 - c1) / np.maximum(np.abs(new1), _TINY),
                       np.abs(new2 - c2) / np.maximum(np.abs(new2), _TINY))
        c1 = np.where(active, new1, c1)
        c2 = np.where(active, new2, c2)
        resid = np.where(active, r, resid)
        iters += active
        active = active & (r >= tol)
        if not active.any():
            break
    return c1, c2, iters, resid, ~active, clamped


def solve_scalar_ce(spectrum: MeanSpectrum, row_var: float, u: float,
                    t: float, s: float, tol: float = 1e-10,
                    max_iter: int = 10_000,
                    warm: tuple[float, float] | None = None) -> CanonicalSolution:
    """Solve the scalar-reduced canonical pair at one (u, t, s).

    Alternating substitution starting from c1 = u + 1, c2 = 2 (or a warm
    start), with 0.5 damping on cells whose update sign flips twice in a
    row.  The residual is the larger relative update of the two unknowns.
    """
    if u <= 0:
        raise InvalidInputError("u must be positive")
    if row_var < 0:
        raise InvalidInputError("row_var must be nonnegative")
    if spectrum.eigenvalues.size == 0:
        raise InvalidInputError("empty mean spectrum")
    lam = spectrum.eigenvalues
    q = ((lam - t) ** 2 + s * s).reshape(-1, 1)
    c1 = np.array([u + 1.0 if warm is None else warm[0]])
    c2 = np.array([2.0 if warm is None else warm[1]])
    c1, c2, iters, resid, conv, clamped = _scalar_sweep(
        q, spectrum.multiplicities, row_var, spectrum.N, u, c1, c2, tol, max_iter)
    if not conv[0]:
        raise NonConvergenceError(
            f"scalar canonical equations did not converge at "
            f"(u={u:g}, t={t:g}, s={s:g})",
            residual=float(resid[0]), iterations=int(iters[0]))
    return CanonicalSolution(c1=float(c1[0]), c2=float(c2[0]), u=u,
                             iterations_used=int(iters[0]),
                             residual=float(resid[0]), clamped=bool(clamped[0]))


# ---------------------------------------------------------------------------
# general path
# ---------------------------------------------------------------------------

def _hpd_inverse(Mmat):
    """Inverse of a Hermitian positive-definite matrix via Cholesky solves."""
    c, lower = cho_factor(Mmat, check_finite=False)
    return cho_solve((c, lower), np.eye(Mmat.shape[0], dtype=Mmat.dtype),
                     check_finite=False)


def solve_general_ce(B: np.ndarray, sigma2: np.ndarray, u: float, t: float,
                     s: float, tol: float = 1e-10, max_iter: int = 10_000,
                     warm: tuple[np.ndarray, np.ndarray] | None = None
                     ) -> CanonicalSolution:
    """Solve the full 2N-equation diagonal system at one (u, t, s).

    Requires a real symmetric mean matrix; each substitution step solves the
    two Hermitian positive-definite systems behind the bracketed inverses
    through Cholesky factorizations.  Oracle-scale only (N <= 500).
    """
    B = np.asarray(B, dtype=float)
    N = B.shape[0]
    if N > 500:
        raise InvalidInputError("general solver is limited to N <= 500")
    if not np.allclose(B, B.T, atol=1e-12):
        raise InvalidInputError("mean matrix must be symmetric")
    if u <= 0:
        raise InvalidInputError("u must be positive")
    sigma2 = np.asarray(sigma2, dtype=float)
    z = t + 1j * s
    Bz = B.astype(complex) - z * np.eye(N)
    BzH = Bz.conj().T
    if warm is None:
        C1 = np.full(N, u + 1.0)
        C2 = np.full(N, 2.0)
    else:
        C1, C2 = warm[0].copy(), warm[1].copy()
    clamped = False
    resid = np.inf
    for it in range(1, max_iter + 1):
        M2 = BzH @ (Bz / C1[:, None])
        M2[np.diag_indices_from(M2)] += C2
        inv2_diag = np.real(np.diagonal(_hpd_inverse(M2)))
        C1n = u + sigma2 @ inv2_diag
        M1 = Bz @ (BzH / C2[:, None])
        M1[np.diag_indices_from(M1)] += C1n
        inv1_diag = np.real(np.diagonal(_hpd_inverse(M1)))
        C2n = 1.0 + sigma2.T @ inv1_diag
        if (C1n <= 0).any() or (C2n <= 0).any():
            C1n = np.maximum(C1n, _TINY)
            C2n = np.maximum(C2n, _TINY)
            clamped = True
        resid = max(
            float(np.max(np.abs(C1n - C1) / np.maximum(np.abs(C1n), _TINY))),
            float(np.max(np.abs(C2n - C2) / np.maximum(np.abs(C2n), _TINY))))
        C1, C2 = C1n, C2n
        if resid < tol:
            return CanonicalSolution(C1_diag=C1, C2_diag=C2, u=u,
                                     iterations_used=it, residual=resid,
                                     clamped=clamped)
    raise NonConvergenceError(
        f"general canonical equations did not converge at "
        f"(u={u:g}, t={t:g}, s={s:g})", residual=resid, iterations=max_iter)


def compute_m(sol: CanonicalSolution, model: ScalarModel | GeneralModel,
              t: float, s: float) -> float:
    """Integrand value m(u, t, s) for a converged canonical solution."""
    if sol.is_scalar:
        if not isinstance(model, ScalarModel):
            raise InvalidInputError("scalar solution needs a ScalarModel")
        lam = model.spectrum.eigenvalues
        q = (lam - t) ** 2 + s * s
        terms = model.spectrum.multiplicities / (sol.c1 + q / sol.c2)
        return float(terms.sum() / model.spectrum.N)
    if not isinstance(model, GeneralModel):
        raise InvalidInputError("general solution needs a GeneralModel")
    B = np.asarray(model.B, dtype=float)
    N = B.shape[0]
    z = t + 1j * s
    Bz = B.astype(complex) - z * np.eye(N)
    M1 = Bz @ (Bz.conj().T / sol.C2_diag[:, None])
    M1[np.diag_indices_from(M1)] += sol.C1_diag
    inv1 = _hpd_inverse(M1)
    return float(np.real(np.trace(inv1)) / N)


# ---------------------------------------------------------------------------
# density integration
# ---------------------------------------------------------------------------

def _scalar_m_block(model: ScalarModel, t_block, s_nodes, u_nodes, tol, max_iter):
    """m(u, t, s) on a block of t columns; u swept descending with warm start."""
    lam = model.spectrum.eigenvalues
    mults = model.spectrum.multiplicities
    N = model.spectrum.N
    T, S = np.meshgrid(t_block, s_nodes, indexing="ij")
    q = (lam[:, None, None] - T[None]) ** 2 + (S * S)[None]
    shape = T.shape
    n_u = u_nodes.size
    m = np.empty(shape + (n_u,))
    ok = np.ones(shape, dtype=bool)
    iters_max = 0
    c1 = np.full(shape, u_nodes[-1] + 1.0)
    c2 = np.full(shape, 2.0)
    for k in range(n_u - 1, -1, -1):
        u = float(u_nodes[k])
        if k == n_u - 1:
            c1 = np.full(shape, u + 1.0)
            c2 = np.full(shape, 2.0)
        c1, c2, iters, resid, conv, clamped = _scalar_sweep(
            q, mults, model.row_var, N, u, c1, c2, tol, max_iter)
        ok &= conv
        iters_max = max(iters_max, int(iters.max()))
        mu = mults.reshape((-1,) + (1,) * c1.ndim)
        m[:, :, k] = np.sum(mu / (c1[None] + q / c2[None]), axis=0) / N
    return m, ok, iters_max


def _general_m_block(model: GeneralModel, t_block, s_nodes, u_nodes, tol, max_iter):
    """General-path analogue of _scalar_m_block (small N only)."""
    shape = (len(t_block), len(s_nodes))
    n_u = u_nodes.size
    m = np.empty(shape + (n_u,))
    ok = np.ones(shape, dtype=bool)
    iters_max = 0
    for i, t in enumerate(t_block):
        for j, s in enumerate(s_nodes):
            warm = None
            for k in range(n_u - 1, -1, -1):
                try:
                    sol = solve_general_ce(model.B, model.sigma2,
                                           float(u_nodes[k]), float(t), float(s),
                                           tol=tol, max_iter=max_iter, warm=warm)
                except NonConvergenceError:
                    ok[i, j] = False
                    m[i, j, k:] = np.nan
                    break
                warm = (sol.C1_diag, sol.C2_diag)
                iters_max = max(iters_max, sol.iterations_used)
                m[i, j, k] = compute_m(sol, model, float(t), float(s))
    return m, ok, iters_max


def integrate_density(model: ScalarModel | GeneralModel, grid: GridSpec,
                      tol: float = 1e-10, max_iter: int = 10_000,
                      threads: int = 1, invalid_limit: float = 0.01,
                      consensus_point: complex = 1 + 0j,
                      consensus_radius: float = 1e-2) -> DensityGrid:
    """Deterministic density approximation on the grid nodes.

    The solve runs on a one-cell padded grid so every requested node has a
    full centered Laplacian stencil.  Cells whose fixed point fails at any
    u node are marked invalid (NaN) along with the stencil neighbors that
    depend on them; more than ``invalid_limit`` invalid cells aborts.

    Negative values produced by the finite differences are clipped to zero
    and their mass recorded.  The mass report also states the mass outside
    a small disk around the consensus point, where a near-singular spike
    makes per-cell values grid-resolution dependent.
    """
    t_nodes = grid.t_nodes()
    s_nodes = grid.s_nodes()
    dt, ds = grid.dt, grid.ds
    tp = np.concatenate([[t_nodes[0] - dt], t_nodes, [t_nodes[-1] + dt]])
    sp = np.concatenate([[s_nodes[0] - ds], s_nodes, [s_nodes[-1] + ds]])
    u_nodes = grid.u_nodes()

    block_fn = _scalar_m_block if isinstance(model, ScalarModel) else _general_m_block
    threads = max(1, int(threads))
    chunks = np.array_split(np.arange(tp.size), min(threads, tp.size))
    chunks = [c for c in chunks if c.size]

    def run(chunk):
        return block_fn(model, tp[chunk], sp, u_nodes, tol, max_iter)

    if threads == 1 or len(chunks) == 1:
        results = [run(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, chunks))
    m = np.concatenate([r[0] for r in results], axis=0)
    ok = np.concatenate([r[1] for r in results], axis=0)
    iters_max = max(r[2] for r in results)

    lap = ((m[2:, 1:-1, :] + m[:-2, 1:-1, :] - 2.0 * m[1:-1, 1:-1, :]) / dt ** 2
           + (m[1:-1, 2:, :] + m[1:-1, :-2, :] - 2.0 * m[1:-1, 1:-1, :]) / ds ** 2)
    ln_u = np.log(u_nodes)
    integral = np.trapezoid(lap * u_nodes[None, None, :], x=ln_u, axis=2)
    values = -integral / (4.0 * math.pi)
    tail_cell = np.abs(lap[:, :, -1]) * u_nodes[-1] / (4.0 * math.pi)

    # an inner cell is valid only if its whole stencil converged
    valid = (ok[1:-1, 1:-1] & ok[2:, 1:-1] & ok[:-2, 1:-1]
             & ok[1:-1, 2:] & ok[1:-1, :-2])
    n_invalid = int((~valid).sum())
    invalid_cells = [(int(i), int(j)) for i, j in zip(*np.nonzero(~valid))]
    if n_invalid > invalid_limit * valid.size:
        raise DensityFailure(
            f"{n_invalid}/{valid.size} grid cells failed to converge")

    negative = np.where(valid & (values < 0), values, 0.0)
    clipped_mass = float(-negative.sum() * grid.cell_area)
    values = np.where(valid, np.clip(values, 0.0, None), np.nan)

    out = DensityGrid(t=t_nodes, s=s_nodes, values=values)
    out.meta = {
        "grid": grid.to_dict(),
        "solver_tol": tol,
        "solver_max_iter": max_iter,
        "max_iterations_used": iters_max,
        "clipped_mass": clipped_mass,
        "tail_bound_total": float(np.nansum(np.where(valid, tail_cell, 0.0))
                                  * grid.cell_area),
        "tail_bound_max": float(np.nanmax(np.where(valid, tail_cell, 0.0))),
        "invalid_cells": invalid_cells,
        "mass": out.mass,
        "mass_excluding_consensus": out.mass_excluding(consensus_point,
                                                       consensus_radius),
        "model": ("scalar" if isinstance(model, ScalarModel) else "general"),
    }
    return out


def map_xi_density_to_w(density: DensityGrid, alpha: float,
                        target: GridSpec | None = None) -> DensityGrid:
    """Affine push-forward of a scaled-adjacency density to the iteration matrix.

    The map sends lambda to 1 - alpha + alpha*lambda, so the density picks up
    the inverse map and the 1/alpha**2 Jacobian:

        f_W(x, y) = f_Xi((x - 1)/alpha + 1, y/alpha) / alpha**2.

    With no target grid the image of the source nodes is used, which makes
    the resampling exact; an explicit target grid is filled by bilinear
    interpolation and must be covered by the mapped source.
    """
    if alpha == 0:
        raise InvalidInputError("alpha must be nonzero")
    if target is None:
        t_new = 1.0 + alpha * (density.t - 1.0)
        s_new = alpha * density.s
        out = DensityGrid(t=t_new, s=s_new, values=density.values / alpha ** 2,
                          meta=dict(density.meta))
        out.meta["mapped_alpha"] = alpha
        return out
    from scipy.interpolate import RegularGridInterpolator

    interp = RegularGridInterpolator(
        (density.t, density.s), np.nan_to_num(density.values, nan=0.0),
        method="linear", bounds_error=True)
    tt = target.t_nodes()
    ss = target.s_nodes()
    T, S = np.meshgrid(tt, ss, indexing="ij")
    pre_t = (T - 1.0) / alpha + 1.0
    pre_s = S / alpha
    pts = np.stack([pre_t.ravel(), pre_s.ravel()], axis=1)
    try:
        vals = interp(pts).reshape(T.shape) / alpha ** 2
    except ValueError as exc:
        raise CoverageError(
            f"target grid exceeds mapped source coverage: {exc}") from exc
    out = DensityGrid(t=tt, s=ss, values=vals, meta=dict(density.meta))
    out.meta["mapped_alpha"] = alpha
    return out
