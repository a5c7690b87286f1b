"""Filtering-region extraction and minimax polynomial filter design.

The design problem: find real coefficients a_0..a_d with sum 1 (so the
polynomial fixes 1) minimizing the maximum squared response |p(lambda)|^2
over a set of sample points drawn from the filtering region.  Each sample
point contributes one convex quadratic constraint a^T Q a <= eps, so the
problem is a QCLP and is solved here by a self-contained bracket refinement:
a Polyak-step projected-subgradient pass gives cheap descent, a smoothed-max
Newton stage polishes the iterate, and a dual weighting of the constraints
certifies a lower bound.  The returned bracket width respects
tol * max(eps, 1).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyRegionError,
    InfeasibleBaselineError,
    InvalidInputError,
    SolverFailure,
)
from .grids import DensityGrid
from .spectral_empirical import SpectrumSample, per_iteration_rate_from_sample

__all__ = [
    "Region",
    "SamplePoints",
    "Filter",
    "extract_region",
    "sample_region",
    "build_q",
    "design_filter",
    "mean_spectrum_filter",
    "oracle_filter",
    "per_iteration_rate",
]


# ---------------------------------------------------------------------------
# region handling
# ---------------------------------------------------------------------------

@dataclass
class Region:
    mask: np.ndarray              # bool, aligned with the density grid nodes
    t: np.ndarray
    s: np.ndarray
    kappa: float
    tau: float
    boundary: list = field(default_factory=list)   # list of (k, 2) polylines

    @property
    def cell_count(self) -> int:
        return int(self.mask.sum())

    def cell_centers(self) -> np.ndarray:
        ti, si = np.nonzero(self.mask)
        return self.t[ti] + 1j * self.s[si]

    def boundary_csv(self) -> str:
        lines = ["t,s"]
        for poly in self.boundary:
            for t, s in poly:
                lines.append(f"{t:.17g},{s:.17g}")
            lines.append(",")      # blank separator between polylines
        return "\n".join(lines) + "\n"


@dataclass
class SamplePoints:
    points: np.ndarray            # complex, closed under conjugation
    scheme: str
    spacing: tuple

    @property
    def count(self) -> int:
        return self.points.size


def extract_region(density: DensityGrid, kappa: float, tau: float) -> Region:
    """Cells where the density exceeds tau, at least kappa away from 1.

    The mask is symmetrized about the real axis when the s-axis itself is
    symmetric: realized spectra of real matrices are conjugate-symmetric,
    so any asymmetry in the numerical density is discretization noise.
    """
    T, S = density.node_mesh()
    vals = np.nan_to_num(density.values, nan=0.0)
    mask = (vals > tau) & ((T - 1.0) ** 2 + S ** 2 > kappa ** 2)
    if _s_axis_symmetric(density.s):
        mask = mask | mask[:, ::-1]
    if not mask.any():
        raise EmptyRegionError(
            f"no cells with density > {tau:g} outside the {kappa:g}-ball; "
            "lower tau or enlarge the grid")
    boundary = _trace_boundary(mask, density.t, density.s)
    return Region(mask=mask, t=density.t.copy(), s=density.s.copy(),
                  kappa=kappa, tau=tau, boundary=boundary)


def _s_axis_symmetric(s: np.ndarray) -> bool:
    return bool(np.allclose(s + s[::-1], 0.0, atol=1e-9 * max(1.0, np.abs(s).max())))


def _trace_boundary(mask: np.ndarray, t: np.ndarray, s: np.ndarray) -> list:
    """Marching-squares outline of the mask in (t, s) coordinates."""
    from skimage.measure import find_contours

    polylines = []
    dt = t[1] - t[0]
    ds = s[1] - s[0]
    for contour in find_contours(mask.astype(float), 0.5):
        pts = np.empty_like(contour)
        pts[:, 0] = t[0] + contour[:, 0] * dt
        pts[:, 1] = s[0] + contour[:, 1] * ds
        polylines.append(pts)
    return polylines


def sample_region(region: Region, max_points: int = 1000) -> SamplePoints:
    """Deterministic design points: decimated cell centers plus boundary cells.

    Masked-cell centers are thinned by a uniform stride down to at most
    ``max_points``; the centers of boundary cells (masked cells with an
    unmasked 4-neighbor) are then appended, since minimax-active constraints
    concentrate on the region boundary, and the set is closed under
    conjugation.
    """
    if not region.mask.any():
        raise EmptyRegionError("cannot sample an empty region")
    centers = region.cell_centers()
    if centers.size > max_points:
        stride = math.ceil(centers.size / max_points)
        centers = centers[::stride]
    m = region.mask
    inner = np.zeros_like(m)
    inner[1:-1, 1:-1] = (m[1:-1, 1:-1] & m[2:, 1:-1] & m[:-2, 1:-1]
                         & m[1:-1, 2:] & m[1:-1, :-2])
    edge = m & ~inner
    ti, si = np.nonzero(edge)
    boundary_pts = region.t[ti] + 1j * region.s[si]
    pts = np.concatenate([centers, boundary_pts])
    pts = np.concatenate([pts, pts.conj()])
    pts = np.unique(pts)
    return SamplePoints(points=pts, scheme="centers+boundary",
                        spacing=(float(region.t[1] - region.t[0]),
                                 float(region.s[1] - region.s[0])))


# ---------------------------------------------------------------------------
# filters
# ---------------------------------------------------------------------------

@dataclass
class Filter:
    degree: int
    coefficients: np.ndarray      # a_0 .. a_d
    achieved_epsilon: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.size != self.degree + 1:
            raise InvalidInputError("need degree+1 coefficients")
        if abs(self.coefficients.sum() - 1.0) > 1e-12:
            raise InvalidInputError("coefficients must sum to 1")

    def evaluate(self, lam) -> np.ndarray:
        return np.polyval(self.coefficients[::-1], lam)

    def to_json(self) -> str:
        return json.dumps({
            "degree": self.degree,
            "coefficients": self.coefficients.tolist(),
            "achieved_epsilon": self.achieved_epsilon,
            "design_metadata": self.meta,
        }, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Filter":
        doc = json.loads(text)
        return cls(degree=doc["degree"],
                   coefficients=np.asarray(doc["coefficients"]),
                   achieved_epsilon=doc["achieved_epsilon"],
                   meta=doc.get("design_metadata", {}))

    @classmethod
    def trivial(cls) -> "Filter":
        return cls(degree=1, coefficients=np.array([0.0, 1.0]),
                   achieved_epsilon=float("nan"), meta={"kind": "trivial"})


def build_q(point: complex, d: int) -> np.ndarray:
    """Real PSD matrix with a^T Q a = |p(point)|^2 for real coefficients a.

    Averaging the Vandermonde outer products of the point and its conjugate
    keeps the matrix real: Q_jk = Re(conj(point^j) * point^k).
    """
    if d < 1:
        raise InvalidInputError("degree must be at least 1")
    V = np.power(complex(point), np.arange(d + 1))
    return np.real(np.outer(V.conj(), V))


def _q_stack(points: np.ndarray, d: int) -> np.ndarray:
    V = points[:, None] ** np.arange(d + 1)[None, :]
    return np.real(V.conj()[:, :, None] * V[:, None, :])


def _responses(Q: np.ndarray, a: np.ndarray) -> np.ndarray:
    return np.einsum("ijk,j,k->i", Q, a, a)


def _polyak_descent(Q, a, target, iters):
    """Projected subgradient with Polyak steps toward max response <= target."""
    dim = a.size
    ones = np.ones(dim)
    best_a = a.copy()
    best_f = float(np.max(_responses(Q, a)))
    for _ in range(iters):
        r = _responses(Q, a)
        i = int(np.argmax(r))
        f = float(r[i])
        if f < best_f:
            best_f, best_a = f, a.copy()
        if f <= target:
            break
        g = 2.0 * (Q[i] @ a)
        g -= (g @ ones) / dim * ones
        gg = float(g @ g)
        if gg < 1e-300:
            break
        a = a - ((f - target) / gg) * g
    return best_a, best_f


def _affine_basis(dim: int) -> np.ndarray:
    """Orthonormal basis of the zero-sum subspace."""
    A = np.eye(dim) - np.full((dim, dim), 1.0 / dim)
    u, sv, _ = np.linalg.svd(A)
    return u[:, :dim - 1]


def _smooth_newton(Q, a, mu, grad_tol, max_steps=60):
    """Minimize the softmax-smoothed max response over the affine slice."""
    dim = a.size
    Z = _affine_basis(dim)

    def fval(av):
        r = _responses(Q, av)
        rmax = r.max()
        return rmax + mu * np.log(np.exp((r - rmax) / mu).sum()), r

    f, r = fval(a)
    for _ in range(max_steps):
        rmax = r.max()
        w = np.exp((r - rmax) / mu)
        w /= w.sum()
        G = 2.0 * np.einsum("i,ijk,k->j", w, Q, a)       # sum w_i grad r_i
        gi = 2.0 * np.einsum("ijk,k->ij", Q, a)          # per-constraint grads
        H = 2.0 * np.einsum("i,ijk->jk", w, Q)
        H += (np.einsum("i,ij,ik->jk", w, gi, gi)
              - np.outer(G, G)) / mu
        g_red = Z.T @ G
        if np.linalg.norm(g_red) <= grad_tol:
            break
        H_red = Z.T @ H @ Z
        H_red[np.diag_indices_from(H_red)] += 1e-13 * max(1.0, np.trace(H_red))
        try:
            step = np.linalg.solve(H_red, -g_red)
        except np.linalg.LinAlgError:
            step = -g_red
        # backtracking line search on the smoothed objective
        tstep = 1.0
        base = f
        for _ in range(50):
            cand = a + tstep * (Z @ step)
            fc, rc = fval(cand)
            if fc <= base + 1e-4 * tstep * (g_red @ step):
                a, f, r = cand, fc, rc
                break
            tstep *= 0.5
        else:
            break
    rmax = r.max()
    w = np.exp((r - rmax) / mu)
    w /= w.sum()
    return a, w


def _dual_lower_bound(Q, w) -> float:
    """min_a a^T (sum_i w_i Q_i) a over the affine slice; valid for any simplex w."""
    M = np.einsum("i,ijk->jk", w, Q)
    vals, vecs = np.linalg.eigh(M)
    ones = np.ones(M.shape[0])
    b = vecs.T @ ones
    cutoff = max(vals.max(), 0.0) * 1e-14
    null = vals <= cutoff
    if np.any(null & (np.abs(b) > 1e-12 * math.sqrt(M.shape[0]))):
        return 0.0
    denom = float(np.sum(b[~null] ** 2 / vals[~null]))
    if denom <= 0:
        return 0.0
    return 1.0 / denom


def design_filter(points, d: int, tol: float = 1e-6,
                  subgradient_iters: int = 500) -> Filter:
    """Minimax filter over the sample points: min eps s.t. sum(a) = 1 and
    a^T Q(point) a <= eps at every point.

    Bracket refinement: the upper bound tracks the best feasible iterate
    (subgradient phase, then smoothed-max Newton polish under decreasing
    smoothing), the lower bound comes from the dual constraint weighting,
    and the loop stops when the bracket width is at most tol * max(eps, 1).
    The affine constraint is enforced exactly by a final projection, and
    achieved_epsilon is the true maximum response of the returned vector.
    """
    pts = np.asarray(points, dtype=complex).ravel()
    if pts.size == 0:
        raise InvalidInputError("need at least one design point")
    if d < 1:
        raise InvalidInputError("degree must be at least 1")
    # conjugate pairs give identical constraints; keep the closed upper half
    pts_u = np.unique(np.where(pts.imag < 0, pts.conj(), pts))
    Q = _q_stack(pts_u, d)

    a = np.zeros(d + 1)
    a[-1] = 1.0
    upper = float(np.max(_responses(Q, a)))
    best_a = a.copy()
    lower = 0.0

    # cheap descent pass (Polyak target below the current value)
    a, f = _polyak_descent(Q, a, 0.5 * upper, subgradient_iters)
    if f < upper:
        upper, best_a = f, a.copy()

    mu = max(upper, tol) / 4.0
    mu_floor = 1e-16 * max(upper, 1.0)
    stalled = 0
    while upper - lower > tol * max(upper, 1.0):
        a, w = _smooth_newton(Q, best_a.copy(), mu,
                              grad_tol=1e-12 * max(1.0, upper))
        f = float(np.max(_responses(Q, a)))
        if f < upper:
            upper, best_a = f, a.copy()
            stalled = 0
        else:
            stalled += 1
        lower = max(lower, _dual_lower_bound(Q, w))
        if upper - lower <= tol * max(upper, 1.0):
            break
        mu /= 8.0
        if mu < mu_floor or stalled > 6:
            raise SolverFailure(
                f"minimax bracket stalled at [{lower:g}, {upper:g}] "
                f"(width {upper - lower:g}, tol {tol:g})",
                best_coefficients=best_a, best_value=upper)

    a = best_a
    a = a - (a.sum() - 1.0) / a.size          # exact affine projection
    achieved = float(np.max(_responses(Q, a)))
    return Filter(degree=d, coefficients=a, achieved_epsilon=achieved,
                  meta={
                      "kind": "minimax",
                      "n_points": int(pts.size),
                      "n_unique_constraints": int(pts_u.size),
                      "dual_lower_bound": lower,
                      "bracket_width": upper - lower,
                      "tol": tol,
                  })


def mean_spectrum_filter(mean_eigs, d: int) -> Filter:
    """Root-placement baseline: zeros at the d non-unit mean eigenvalues
    closest in modulus to the unit circle, normalized so the filter fixes 1.

    Only defined for d <= K-1 with K distinct mean eigenvalues; beyond that
    the baseline has no root left to place and is reported as absent.
    """
    eigs = np.asarray(mean_eigs, dtype=float).ravel()
    K = eigs.size
    unit = np.abs(eigs - 1.0) <= 1e-9
    if not unit.any():
        raise InvalidInputError("mean spectrum must include the eigenvalue 1")
    if d > K - 1:
        raise InfeasibleBaselineError(
            f"degree {d} exceeds K-1 = {K - 1} distinct non-unit eigenvalues")
    others = eigs[~unit]
    # closest to the unit circle first; ties broken toward larger real part
    order = np.lexsort((-others, np.abs(np.abs(others) - 1.0)))
    roots = others[order][:d]
    coeffs_desc = np.poly(roots)              # monic, highest power first
    norm = np.prod(1.0 - roots)
    coeffs = (coeffs_desc / norm)[::-1]
    filt = Filter(degree=d, coefficients=coeffs, achieved_epsilon=0.0,
                  meta={"kind": "mean_spectrum", "roots": roots.tolist()})
    responses = np.abs(filt.evaluate(others)) ** 2
    filt.achieved_epsilon = float(responses.max()) if responses.size else 0.0
    return filt


def oracle_filter(spectrum: SpectrumSample, d: int, tol: float = 1e-6) -> Filter:
    """Minimax filter designed on the realized non-consensus eigenvalues."""
    pts = spectrum.without_consensus()
    filt = design_filter(pts, d, tol=tol)
    filt.meta["kind"] = "oracle"
    return filt


def per_iteration_rate(filt: Filter | None, spectrum: SpectrumSample) -> float:
    """(1/d) * ln of the max filtered response over the non-consensus spectrum."""
    return per_iteration_rate_from_sample(spectrum, filt)
