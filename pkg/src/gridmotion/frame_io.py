"""Binary frame files and a lossless CSV debug export for grid maps.

Chunked little-endian layout, one file per frame:

    offset  field
    0       magic  b"DGF1"
    4       u16    format version (1)
    6       u16    reserved (0)
    8       u32    side_cells
    12      f64    cell_size
    20      f64    origin_x
    28      f64    origin_y
    36      f64    timestamp
    44      f32[side^2]   occupancy, row-major
    ...     u64    particle count N
    ...     f64[N,5]      particle table, columns px, py, vx, vy, weight

The occupancy raster is stored as 32-bit floats; the particle table keeps
full precision so a reloaded map reproduces the particle state exactly. On
load, the occupancy of particle-bearing cells is recomputed from the weight
sums (the authoritative value); pure-occupancy cells take the stored raster.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .grid import DynamicGridMap, GridSpec, ParticlePool

MAGIC = b"DGF1"
_HEADER = struct.Struct("<4sHHIdddd")


def save_frame(gmap: DynamicGridMap, path) -> None:
    spec = gmap.spec
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, 1, 0, spec.side_cells, spec.cell_size,
                              spec.origin[0], spec.origin[1], gmap.timestamp))
        fh.write(gmap.occupancy.astype("<f4").tobytes(order="C"))
        p = gmap.particles
        fh.write(struct.pack("<Q", len(p)))
        table = np.stack([p.px, p.py, p.vx, p.vy, p.w], axis=1).astype("<f8")
        fh.write(table.tobytes(order="C"))


def load_frame(path) -> DynamicGridMap:
    raw = Path(path).read_bytes()
    magic, version, _, side, cell_size, ox, oy, ts = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a grid frame file")
    if version != 1:
        raise ValueError(f"{path}: unsupported frame format version {version}")
    off = _HEADER.size
    n_occ = side * side
    occ = np.frombuffer(raw, dtype="<f4", count=n_occ, offset=off).astype(np.float64)
    off += 4 * n_occ
    (n_part,) = struct.unpack_from("<Q", raw, off)
    off += 8
    table = np.frombuffer(raw, dtype="<f8", count=n_part * 5, offset=off)
    table = table.reshape(n_part, 5)

    gmap = DynamicGridMap(GridSpec(side, cell_size, (ox, oy)), timestamp=ts)
    gmap.occupancy = occ.reshape(side, side)
    gmap.particles = ParticlePool(table[:, 0], table[:, 1], table[:, 2],
                                  table[:, 3], table[:, 4])
    if n_part:
        ws = gmap.weight_sums()
        has = np.bincount(gmap.particle_cells(), minlength=side * side) \
            .reshape(side, side) > 0
        gmap.occupancy[has] = ws[has]
        gmap.particle_backed = has
    gmap.invalidate()
    return gmap


def export_cells_csv(gmap: DynamicGridMap, path) -> None:
    """Text dump of per-cell fields for debugging (row, col, occupancy, weights)."""
    from .grid import stats_map

    stats = stats_map(gmap)
    counts = np.zeros(gmap.spec.side_cells ** 2, dtype=np.int64)
    if len(gmap.particles):
        counts = np.bincount(gmap.particle_cells(), minlength=counts.size)
    counts = counts.reshape(gmap.occupancy.shape)
    with open(path, "w", newline="") as fh:
        fh.write("row,col,occupancy,n_particles,mean_vx,mean_vy,"
                 "var_vx,var_vy,cov_xy,mahalanobis,overall_var,speed\n")
        s = gmap.spec.side_cells
        for r in range(s):
            for c in range(s):
                fh.write(f"{r},{c},{gmap.occupancy[r, c]!r},{counts[r, c]},"
                         f"{stats.mean_vx[r, c]!r},{stats.mean_vy[r, c]!r},"
                         f"{stats.var_vx[r, c]!r},{stats.var_vy[r, c]!r},"
                         f"{stats.cov_xy[r, c]!r},{stats.mahalanobis[r, c]!r},"
                         f"{stats.overall_var[r, c]!r},{stats.speed[r, c]!r}\n")
