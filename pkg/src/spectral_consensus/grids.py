"""Rectangular complex-plane grids and densities stored on them.

Grid nodes are cell centers: a grid with ``n_t`` nodes from ``t_min`` to
``t_max`` covers ``[t_min - dt/2, t_max + dt/2]`` with uniform spacing
``dt``.  Density values are per unit area, so ``values.sum() * cell_area``
is the mass captured by the grid.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "GridSpec",
    "DensityGrid",
    "build_u_grid",
    "l1_distance",
]


@dataclass(frozen=True)
class GridSpec:
    """Evaluation rectangle plus the one-sided integration grid in u."""

    t_min: float
    t_max: float
    n_t: int
    s_min: float
    s_max: float
    n_s: int
    beta: float = 1e-6
    u_max: float = 1e3
    n_u: int = 96

    def __post_init__(self):
        if not (self.t_max > self.t_min and self.s_max > self.s_min):
            raise InvalidInputError("grid bounds must be increasing")
        if self.n_t < 2 or self.n_s < 2:
            raise InvalidInputError("need at least 2 nodes per axis")
        if not (self.beta > 0 and self.u_max > self.beta):
            raise InvalidInputError("need 0 < beta < u_max")
        if self.n_u < 16:
            raise InvalidInputError("n_u must be at least 16")

    @property
    def dt(self) -> float:
        return (self.t_max - self.t_min) / (self.n_t - 1)

    @property
    def ds(self) -> float:
        return (self.s_max - self.s_min) / (self.n_s - 1)

    @property
    def cell_area(self) -> float:
        return self.dt * self.ds

    def t_nodes(self) -> np.ndarray:
        return np.linspace(self.t_min, self.t_max, self.n_t)

    def s_nodes(self) -> np.ndarray:
        return np.linspace(self.s_min, self.s_max, self.n_s)

    def u_nodes(self) -> np.ndarray:
        return build_u_grid(self.beta, self.u_max, self.n_u)

    def to_dict(self) -> dict:
        return {
            "t_min": self.t_min, "t_max": self.t_max, "n_t": self.n_t,
            "s_min": self.s_min, "s_max": self.s_max, "n_s": self.n_s,
            "beta": self.beta, "u_max": self.u_max, "n_u": self.n_u,
        }


def build_u_grid(beta: float, u_max: float, n_u: int) -> np.ndarray:
    """Logarithmically spaced nodes from beta to u_max, inclusive."""
    if not (beta > 0 and u_max > beta):
        raise InvalidInputError("need 0 < beta < u_max")
    if n_u < 2:
        raise InvalidInputError("need at least 2 u nodes")
    return np.geomspace(beta, u_max, n_u)


@dataclass
class DensityGrid:
    """Real density sampled at the nodes of a rectangular grid."""

    t: np.ndarray
    s: np.ndarray
    values: np.ndarray            # shape (len(t), len(s)), row-major over t
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.s = np.asarray(self.s, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.t.size, self.s.size):
            raise InvalidInputError(
                f"values shape {self.values.shape} does not match axes "
                f"({self.t.size}, {self.s.size})")

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def ds(self) -> float:
        return float(self.s[1] - self.s[0])

    @property
    def cell_area(self) -> float:
        return self.dt * self.ds

    @property
    def mass(self) -> float:
        return float(np.nansum(self.values) * self.cell_area)

    def grid_area(self) -> float:
        return self.t.size * self.s.size * self.cell_area

    def node_mesh(self):
        return np.meshgrid(self.t, self.s, indexing="ij")

    def mass_excluding(self, center: complex, radius: float) -> float:
        """Mass of cells whose centers lie farther than ``radius`` from ``center``."""
        T, S = self.node_mesh()
        keep = (T - center.real) ** 2 + (S - center.imag) ** 2 > radius ** 2
        return float(np.nansum(self.values[keep]) * self.cell_area)

    # ---- serialization ----------------------------------------------------

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,s,density\n")
        for i, tv in enumerate(self.t):
            for j, sv in enumerate(self.s):
                buf.write(f"{tv:.17g},{sv:.17g},{self.values[i, j]:.17g}\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_csv())

    def write_meta(self, path, extra: dict | None = None) -> None:
        doc = dict(self.meta)
        if extra:
            doc.update(extra)
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")

    @classmethod
    def from_csv(cls, path_or_text) -> "DensityGrid":
        if isinstance(path_or_text, str) and "\n" in path_or_text:
            text = path_or_text
        else:
            with open(path_or_text) as fh:
                text = fh.read()
        rows = [line.split(",") for line in text.strip().splitlines()[1:]]
        data = np.asarray(rows, dtype=float)
        t = np.unique(data[:, 0])
        s = np.unique(data[:, 1])
        if data.shape[0] != t.size * s.size:
            raise InvalidInputError("CSV does not describe a full grid")
        values = data[:, 2].reshape(t.size, s.size)
        return cls(t=t, s=s, values=values)


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON-serializable: {type(obj)}")


def l1_distance(a: DensityGrid, b: DensityGrid, per_unit_area: bool = False) -> float:
    """Integral of |a - b| over the grid, optionally divided by the grid area.

    The per-unit-area form is the scale-free figure used by the validation
    suite: it stays comparable across grids of different extents.
    """
    if a.values.shape != b.values.shape:
        raise InvalidInputError("grids have different shapes")
    if not (np.allclose(a.t, b.t) and np.allclose(a.s, b.s)):
        raise InvalidInputError("grids have different axes")
    total = float(np.nansum(np.abs(a.values - b.values)) * a.cell_area)
    if per_unit_area:
        return total / a.grid_area()
    return total
