"""Sequential Monte Carlo occupancy filter: predict, update, resample.

Each step moves every particle under a constant-velocity model with Gaussian
noise, accumulates the transition mass arriving in each cell into a predicted
occupancy (independence product over source cells), combines prediction and
measurement through a binary Bayes update, rescales particle weights so each
cell's weight sum equals its posterior occupancy, and finally redraws the
particle population of every cell above the retention threshold (systematic
resampling for survivors plus newborn particles; the newborn/survivor mass
ratio is gamma times posterior over predicted occupancy, so cells whose
occupancy the prediction failed to explain get explored with fresh velocity
hypotheses, and a cell with no predicted mass at all is born entirely from
newborns).

Cells whose occupancy mass is not particle-represented evolve as a plain
binary Bayes state with a small floor, so decayed regions can always be
reborn when measurements return. The retention threshold is deliberately low:
a freshly born cell dips while its velocity population is still random, and
culling it there would reset the velocity memory and keep static structure
oscillating well below full occupancy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import DynamicGridMap, ParticlePool, bayes_update
from .sim import MeasurementGrid

PRIOR_CAP = 1.0 - 1e-6


@dataclass
class FilterParams:
    dt: float = 0.1
    process_noise_pos: float = 0.03
    process_noise_vel: float = 0.15
    particles_per_occupied_cell: int = 100
    newborn_ratio_gamma: float = 0.05
    rng_seed: int = 0
    newborn_speed_max: float = 16.7
    occupancy_threshold: float = 0.05  # particle retention / budget bound
    min_occupancy: float = 0.02        # floor for scalar-occupancy cells

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.process_noise_pos < 0 or self.process_noise_vel < 0:
            raise ValueError("noise std-devs must be >= 0")
        if self.newborn_ratio_gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.particles_per_occupied_cell < 1:
            raise ValueError("particles_per_occupied_cell must be >= 1")


def newborn_ratio(gamma: float, p_measured: float, p_predicted: float) -> float:
    """Newborn/survivor mass ratio: gamma * measured / predicted occupancy.

    Infinite when nothing was predicted into the cell (all mass newborn).
    """
    if p_predicted <= 1e-12:
        return np.inf
    return gamma * p_measured / p_predicted


class DogFilter:
    """Holds filter parameters and the seeded RNG; drives one map through time."""

    def __init__(self, params: FilterParams):
        self.params = params
        self.rng = np.random.default_rng(params.rng_seed)
        self._last_prior = None

    # -- predict -------------------------------------------------------------

    def predict(self, gmap: DynamicGridMap) -> np.ndarray:
        """Move particles, drop the ones leaving the grid, return prior occupancy.

        The returned (S, S) array is the transition-mass independence product
        1 - prod(1 - mass(source -> cell)); cells that receive no mass report
        zero. Particle weights are untouched here.
        """
        params = self.params
        spec = gmap.spec
        s = spec.side_cells
        s2 = s * s
        p = gmap.particles
        n = len(p)
        prior = np.zeros(s2, dtype=np.float64)
        if n:
            src = gmap.particle_cells()
            # constant-velocity transition plus white Gaussian noise;
            # draw order is fixed for reproducibility
            p.px = p.px + p.vx * params.dt + self.rng.normal(0.0, params.process_noise_pos, n)
            p.py = p.py + p.vy * params.dt + self.rng.normal(0.0, params.process_noise_pos, n)
            p.vx = p.vx + self.rng.normal(0.0, params.process_noise_vel, n)
            p.vy = p.vy + self.rng.normal(0.0, params.process_noise_vel, n)

            row, col = spec.cell_of(p.px, p.py)
            inside = spec.in_bounds(row, col)
            dst = (row * s + col)[inside]
            src = src[inside]
            p.keep(inside)
            gmap.invalidate()

            if len(p):
                # transition mass per (destination, source) pair
                pair = dst * np.int64(s2) + src
                order = np.argsort(pair, kind="stable")
                pair_sorted = pair[order]
                starts = np.concatenate([[0], np.flatnonzero(np.diff(pair_sorted)) + 1])
                mass = np.add.reduceat(p.w[order], starts)
                dest_of_pair = (pair_sorted[starts] // s2).astype(np.int64)
                mass = np.clip(mass, 0.0, 1.0)
                # independence product over source cells per destination
                dstarts = np.concatenate(
                    [[0], np.flatnonzero(np.diff(dest_of_pair)) + 1])
                survive = np.multiply.reduceat(1.0 - mass, dstarts)
                prior[dest_of_pair[dstarts]] = 1.0 - survive
        prior = np.minimum(prior, PRIOR_CAP).reshape(s, s)
        self._last_prior = prior
        return prior

    # -- update --------------------------------------------------------------

    def update(self, gmap: DynamicGridMap, measurement: MeasurementGrid,
               prior_occ: np.ndarray) -> None:
        """Bayes-combine prediction and measurement; rescale particle weights.

        Particle-backed cells use the particle-predicted prior. Scalar cells
        continue their stored occupancy (floored so they stay revivable) or,
        when fresh mass arrives, whichever of the two is larger. After this
        call every particle-bearing cell's weight sum equals its posterior.
        """
        spec = gmap.spec
        s = spec.side_cells
        if measurement.l_occ.shape != (s, s):
            raise ValueError(
                f"measurement shape {measurement.l_occ.shape} != map shape {(s, s)}")
        if prior_occ.shape != (s, s):
            raise ValueError("prior shape mismatch")

        backed = gmap.particle_backed.ravel()
        stored = np.maximum(gmap.occupancy.ravel(), self.params.min_occupancy)
        eff_prior = np.where(backed, prior_occ.ravel(),
                             np.maximum(prior_occ.ravel(), stored))
        eff_prior = np.minimum(eff_prior, PRIOR_CAP)
        posterior = bayes_update(eff_prior, measurement.l_occ.ravel(),
                                 measurement.l_free.ravel())
        p = gmap.particles
        if len(p):
            cells = gmap.particle_cells()
            # per-particle measurement likelihood: the cell's occupancy
            # likelihood, identical for all residents, so the normalization
            # factor is exact
            w_tilde = p.w * measurement.l_occ.ravel()[cells]
            tsum = np.bincount(cells, weights=w_tilde, minlength=s * s)
            beta = np.where(tsum > 0, posterior / np.where(tsum > 0, tsum, 1.0), 0.0)
            p.w = w_tilde * beta[cells]
        gmap.occupancy = posterior.reshape(s, s)

    # -- resample --------------------------------------------------------------

    def resample(self, gmap: DynamicGridMap, measurement: MeasurementGrid) -> None:
        """Redraw the particle population of every cell above the retention bound.

        Requires a preceding predict() in this filter (the predicted occupancy
        sets the newborn/survivor mass split). Cells at or below the bound drop
        their particles and keep the scalar occupancy.
        """
        if self._last_prior is None:
            raise RuntimeError("resample requires a preceding predict()")
        params = self.params
        spec = gmap.spec
        s = spec.side_cells
        n_per_cell = params.particles_per_occupied_cell
        occ = gmap.occupancy.ravel()
        occupied = np.flatnonzero(occ > params.occupancy_threshold)

        if gmap._csr is None:
            gmap._build_csr()
        order, bounds = gmap._csr
        pool = gmap.particles
        prior = self._last_prior.ravel()

        x0, y0 = spec.lower_corner
        cell = spec.cell_size
        vmax = params.newborn_speed_max

        out_px, out_py, out_vx, out_vy, out_w = [], [], [], [], []
        for flat in occupied:
            mass = occ[flat]
            members = order[bounds[flat]:bounds[flat + 1]]
            # measured/predicted occupancy ratio controls exploration
            ratio = newborn_ratio(params.newborn_ratio_gamma, mass, prior[flat])
            if len(members) == 0 or not np.isfinite(ratio):
                survivor_mass = 0.0
            else:
                survivor_mass = mass / (1.0 + ratio)
            newborn_mass = mass - survivor_mass

            if survivor_mass > 0.0:
                n_new = int(round(n_per_cell * newborn_mass / mass))
                if newborn_mass > 0.0:
                    n_new = max(n_new, 1)
                n_new = min(n_new, n_per_cell - 1)
            else:
                n_new = n_per_cell
            n_sur = n_per_cell - n_new

            if n_sur > 0:
                w = pool.w[members]
                cdf = np.cumsum(w)
                cdf[-1] = cdf[-1] if cdf[-1] > 0 else 1.0
                u = (np.arange(n_sur) + self.rng.uniform()) / n_sur * cdf[-1]
                chosen = members[np.searchsorted(cdf, u, side="right").clip(0, len(members) - 1)]
                out_px.append(pool.px[chosen])
                out_py.append(pool.py[chosen])
                out_vx.append(pool.vx[chosen])
                out_vy.append(pool.vy[chosen])
                out_w.append(np.full(n_sur, survivor_mass / n_sur))
            if n_new > 0:
                r, c = divmod(int(flat), s)
                out_px.append(x0 + (c + self.rng.uniform(size=n_new)) * cell)
                out_py.append(y0 + (r + self.rng.uniform(size=n_new)) * cell)
                out_vx.append(self.rng.uniform(-vmax, vmax, n_new))
                out_vy.append(self.rng.uniform(-vmax, vmax, n_new))
                out_w.append(np.full(n_new, newborn_mass / n_new))

        if out_px:
            gmap.particles = ParticlePool(
                np.concatenate(out_px), np.concatenate(out_py),
                np.concatenate(out_vx), np.concatenate(out_vy),
                np.concatenate(out_w))
        else:
            gmap.particles = ParticlePool()
        backed = np.zeros(s * s, dtype=bool)
        backed[occupied] = True
        gmap.particle_backed = backed.reshape(s, s)
        gmap.invalidate()

    # -- one full step --------------------------------------------------------

    def step(self, gmap: DynamicGridMap, measurement: MeasurementGrid) -> DynamicGridMap:
        prior = self.predict(gmap)
        self.update(gmap, measurement, prior)
        self.resample(gmap, measurement)
        gmap.timestamp += self.params.dt
        return gmap
