"""Grid lattice, particle storage, per-cell velocity statistics and occupancy updates.

The map is a square lattice of cells. Each cell carries an occupancy
probability. Cells that currently hold particles represent their occupancy
as the sum of the resident particle weights (kept consistent by the filter's
normalization); cells without particles keep a plain scalar occupancy that
evolves like a binary Bayes state, starting at the uninformed value 0.5.

World frame: x grows with column index, y grows with row index. The grid is
centered on ``GridSpec.origin``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class EmptyCellError(ValueError):
    """Raised when per-cell statistics are requested for a cell without particles."""


class DegenerateEvidenceError(ValueError):
    """Raised when the Bayes update denominator underflows."""


VARIANCE_FLOOR = 1e-4       # (m/s)^2, floor under velocity variances before division
COV_REGULARIZATION = 1e-6   # added to the covariance diagonal before inversion


@dataclass(frozen=True)
class GridSpec:
    """Geometry of the square grid: cells per edge, meters per cell, world center."""

    side_cells: int
    cell_size: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.side_cells < 8:
            raise ValueError(f"side_cells must be >= 8, got {self.side_cells}")
        if self.cell_size <= 0:
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")

    @property
    def extent(self) -> float:
        """Edge length in meters."""
        return self.side_cells * self.cell_size

    @property
    def lower_corner(self) -> tuple[float, float]:
        ox, oy = self.origin
        half = self.extent / 2.0
        return ox - half, oy - half

    def cell_of(self, x, y):
        """Map world coordinates to (row, col) by floor division. May be out of range."""
        x0, y0 = self.lower_corner
        col = np.floor((np.asarray(x) - x0) / self.cell_size).astype(np.int64)
        row = np.floor((np.asarray(y) - y0) / self.cell_size).astype(np.int64)
        return row, col

    def in_bounds(self, row, col):
        s = self.side_cells
        return (row >= 0) & (row < s) & (col >= 0) & (col < s)

    def cell_centers(self):
        """(S, S, 2) array of world (x, y) cell-center coordinates."""
        x0, y0 = self.lower_corner
        idx = (np.arange(self.side_cells) + 0.5) * self.cell_size
        xs = x0 + idx
        ys = y0 + idx
        cx, cy = np.meshgrid(xs, ys)  # row-major: [row, col]
        return np.stack([cx, cy], axis=-1)


@dataclass
class Particle:
    """One hypothesis: world position, velocity, probability mass."""

    px: float
    py: float
    vx: float
    vy: float
    weight: float


@dataclass
class GridCell:
    """Read view of one cell: occupancy plus the indices of its resident particles."""

    occupancy: float
    particle_indices: np.ndarray


@dataclass
class CellStats:
    """Weighted velocity moments of one cell's particle population."""

    mean_vx: float
    mean_vy: float
    var_vx: float
    var_vy: float
    cov_xy: float
    mahalanobis: float
    overall_var: float
    speed: float


class ParticlePool:
    """Struct-of-arrays particle storage (float64 throughout)."""

    __slots__ = ("px", "py", "vx", "vy", "w")

    def __init__(self, px=None, py=None, vx=None, vy=None, w=None):
        empty = np.zeros(0, dtype=np.float64)
        self.px = np.asarray(px, dtype=np.float64) if px is not None else empty.copy()
        self.py = np.asarray(py, dtype=np.float64) if py is not None else empty.copy()
        self.vx = np.asarray(vx, dtype=np.float64) if vx is not None else empty.copy()
        self.vy = np.asarray(vy, dtype=np.float64) if vy is not None else empty.copy()
        self.w = np.asarray(w, dtype=np.float64) if w is not None else empty.copy()

    def __len__(self):
        return self.px.shape[0]

    def keep(self, mask_or_index):
        self.px = self.px[mask_or_index]
        self.py = self.py[mask_or_index]
        self.vx = self.vx[mask_or_index]
        self.vy = self.vy[mask_or_index]
        self.w = self.w[mask_or_index]

    def copy(self) -> "ParticlePool":
        return ParticlePool(self.px.copy(), self.py.copy(), self.vx.copy(),
                            self.vy.copy(), self.w.copy())


class DynamicGridMap:
    """Square occupancy grid whose occupied cells carry a particle velocity population."""

    def __init__(self, spec: GridSpec, timestamp: float = 0.0):
        self.spec = spec
        self.timestamp = timestamp
        s = spec.side_cells
        # uninformed initial occupancy, as for a fresh binary Bayes filter
        self.occupancy = np.full((s, s), 0.5, dtype=np.float64)
        # cells whose occupancy mass is represented by particles (set by the
        # filter's resample); everything else carries occupancy as a scalar
        self.particle_backed = np.zeros((s, s), dtype=bool)
        self.particles = ParticlePool()
        self._csr = None  # (order, boundaries) cache, invalidated on mutation

    # -- particle/cell bookkeeping ------------------------------------------------

    def invalidate(self):
        self._csr = None

    def particle_cells(self):
        """Flat cell index of every particle (row * side + col). Caller ensures bounds."""
        row, col = self.spec.cell_of(self.particles.px, self.particles.py)
        return row * self.spec.side_cells + col

    def _build_csr(self):
        s2 = self.spec.side_cells ** 2
        cells = self.particle_cells()
        order = np.argsort(cells, kind="stable")
        counts = np.bincount(cells, minlength=s2)
        bounds = np.concatenate([[0], np.cumsum(counts)])
        self._csr = (order, bounds)
        return self._csr

    def cell_particle_indices(self, row: int, col: int) -> np.ndarray:
        """Indices into the particle pool of the particles resident in (row, col)."""
        if self._csr is None:
            self._build_csr()
        order, bounds = self._csr
        flat = row * self.spec.side_cells + col
        return order[bounds[flat]:bounds[flat + 1]]

    def cell(self, row: int, col: int) -> GridCell:
        return GridCell(float(self.occupancy[row, col]),
                        self.cell_particle_indices(row, col))

    def particle(self, i: int) -> Particle:
        p = self.particles
        return Particle(float(p.px[i]), float(p.py[i]), float(p.vx[i]),
                        float(p.vy[i]), float(p.w[i]))

    def weight_sums(self) -> np.ndarray:
        """(S, S) array of per-cell resident particle weight sums."""
        s = self.spec.side_cells
        if len(self.particles) == 0:
            return np.zeros((s, s), dtype=np.float64)
        sums = np.bincount(self.particle_cells(), weights=self.particles.w,
                           minlength=s * s)
        return sums.reshape(s, s)

    def consistency_error(self) -> float:
        """Max |sum of weights - occupancy| over cells that hold particles."""
        if len(self.particles) == 0:
            return 0.0
        s = self.spec.side_cells
        counts = np.bincount(self.particle_cells(), minlength=s * s).reshape(s, s)
        has = counts > 0
        if not has.any():
            return 0.0
        return float(np.max(np.abs(self.weight_sums()[has] - self.occupancy[has])))


# -- operations --------------------------------------------------------------------


def bayes_update(prior, likelihood_occ, likelihood_free):
    """Binary Bayes combination of a prior occupancy with inverse-sensor likelihoods.

    Returns prior*l_occ / (prior*l_occ + (1-prior)*l_free). Accepts scalars or
    numpy arrays. The free-space hypothesis is the complement of the prior.
    """
    prior = np.asarray(prior, dtype=np.float64)
    l_occ = np.asarray(likelihood_occ, dtype=np.float64)
    l_free = np.asarray(likelihood_free, dtype=np.float64)
    num = prior * l_occ
    den = num + (1.0 - prior) * l_free
    if np.any(den < 1e-12):
        raise DegenerateEvidenceError("bayes_update denominator below 1e-12")
    out = num / den
    if out.ndim == 0:
        return float(out)
    return out


def normalized_velocity(mean_v, var_v):
    """Velocity scaled by its own standard deviation, with a variance floor."""
    return np.asarray(mean_v, dtype=np.float64) / np.sqrt(
        np.asarray(var_v, dtype=np.float64) + VARIANCE_FLOOR)


def _moments(vx, vy, w):
    wsum = w.sum()
    mvx = float(np.dot(w, vx) / wsum)
    mvy = float(np.dot(w, vy) / wsum)
    dx = vx - mvx
    dy = vy - mvy
    var_vx = float(np.dot(w, dx * dx) / wsum)
    var_vy = float(np.dot(w, dy * dy) / wsum)
    cov = float(np.dot(w, dx * dy) / wsum)
    return mvx, mvy, var_vx, var_vy, cov


def mahalanobis_from_moments(mvx, mvy, var_vx, var_vy, cov):
    """Distance of the zero velocity from the cell's velocity distribution.

    The 2x2 covariance is regularized with a small diagonal so the inverse
    always exists; zero mean velocity gives distance zero.
    """
    a = var_vx + COV_REGULARIZATION
    d = var_vy + COV_REGULARIZATION
    det = a * d - cov * cov
    # inv([[a, c], [c, d]]) applied to the mean vector
    q = (d * mvx * mvx - 2.0 * cov * mvx * mvy + a * mvy * mvy) / det
    return math.sqrt(max(q, 0.0))


def cell_stats(cell: GridCell, pool: ParticlePool) -> CellStats:
    """Weighted mean/variance/covariance of one cell's particle velocities.

    Weights are probability mass, so all moments are weight-weighted.
    """
    idx = cell.particle_indices
    if len(idx) == 0:
        raise EmptyCellError("cell holds no particles")
    w = pool.w[idx]
    if w.sum() <= 0:
        raise EmptyCellError("cell particle weights sum to zero")
    mvx, mvy, var_vx, var_vy, cov = _moments(pool.vx[idx], pool.vy[idx], w)
    m = mahalanobis_from_moments(mvx, mvy, var_vx, var_vy, cov)
    return CellStats(
        mean_vx=mvx, mean_vy=mvy, var_vx=var_vx, var_vy=var_vy, cov_xy=cov,
        mahalanobis=m,
        overall_var=var_vx + 2.0 * cov + var_vy,
        speed=math.hypot(mvx, mvy),
    )


@dataclass
class StatsMap:
    """Vectorized per-cell statistics over a whole map.

    ``valid`` marks cells that hold particles with positive total weight;
    every other field is zero outside the valid support.
    """

    valid: np.ndarray
    mean_vx: np.ndarray
    mean_vy: np.ndarray
    var_vx: np.ndarray
    var_vy: np.ndarray
    cov_xy: np.ndarray
    mahalanobis: np.ndarray
    overall_var: np.ndarray
    speed: np.ndarray
    occupancy: np.ndarray = field(default=None)

    @property
    def vx_norm(self):
        return np.where(self.valid, normalized_velocity(self.mean_vx, self.var_vx), 0.0)

    @property
    def vy_norm(self):
        return np.where(self.valid, normalized_velocity(self.mean_vy, self.var_vy), 0.0)


def stats_map(gmap: DynamicGridMap) -> StatsMap:
    """Per-cell weighted velocity statistics for every particle-bearing cell."""
    s = gmap.spec.side_cells
    s2 = s * s
    shape = (s, s)
    zeros = lambda: np.zeros(shape, dtype=np.float64)  # noqa: E731
    out = StatsMap(valid=np.zeros(shape, dtype=bool), mean_vx=zeros(),
                   mean_vy=zeros(), var_vx=zeros(), var_vy=zeros(), cov_xy=zeros(),
                   mahalanobis=zeros(), overall_var=zeros(), speed=zeros(),
                   occupancy=gmap.occupancy.copy())
    if len(gmap.particles) == 0:
        return out
    cells = gmap.particle_cells()
    p = gmap.particles
    wsum = np.bincount(cells, weights=p.w, minlength=s2)
    valid = wsum > 0
    safe = np.where(valid, wsum, 1.0)
    mvx = np.bincount(cells, weights=p.w * p.vx, minlength=s2) / safe
    mvy = np.bincount(cells, weights=p.w * p.vy, minlength=s2) / safe
    dx = p.vx - mvx[cells]
    dy = p.vy - mvy[cells]
    var_vx = np.bincount(cells, weights=p.w * dx * dx, minlength=s2) / safe
    var_vy = np.bincount(cells, weights=p.w * dy * dy, minlength=s2) / safe
    cov = np.bincount(cells, weights=p.w * dx * dy, minlength=s2) / safe

    a = var_vx + COV_REGULARIZATION
    d = var_vy + COV_REGULARIZATION
    det = a * d - cov * cov
    q = (d * mvx * mvx - 2.0 * cov * mvx * mvy + a * mvy * mvy) / det
    m = np.sqrt(np.maximum(q, 0.0))

    out.valid = valid.reshape(shape)
    sel = out.valid
    out.mean_vx[sel] = mvx.reshape(shape)[sel]
    out.mean_vy[sel] = mvy.reshape(shape)[sel]
    out.var_vx[sel] = var_vx.reshape(shape)[sel]
    out.var_vy[sel] = var_vy.reshape(shape)[sel]
    out.cov_xy[sel] = cov.reshape(shape)[sel]
    out.mahalanobis[sel] = m.reshape(shape)[sel]
    out.overall_var[sel] = (var_vx + 2.0 * cov + var_vy).reshape(shape)[sel]
    out.speed[sel] = np.hypot(mvx, mvy).reshape(shape)[sel]
    return out
