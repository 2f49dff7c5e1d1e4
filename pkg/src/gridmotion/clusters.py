"""Baseline classifier, occupancy refinement, density clustering and headings.

The baseline scores each occupied cell by the mahalanobis distance of its
mean velocity from zero; thresholding that score is the reference method the
network is compared against. Detected dynamic cells are grouped by
density-based clustering, hulled, and annotated with the statistics the
false-positive suppression and the review tooling consume.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import StatsMap

OCCUPIED_THRESHOLD = 0.6
HEADING_EPS = 1e-6


@dataclass
class DbscanConfig:
    eps: float = 1.5      # neighborhood radius in cells
    min_pts: int = 3

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.min_pts < 1:
            raise ValueError("min_pts must be >= 1")


@dataclass
class LabeledCluster:
    """Connected dynamic region with statistics and review status."""

    cluster_id: int
    cells: list                    # [(row, col), ...]
    hull: list                     # convex hull vertices, cell coordinates
    mean_speed: float
    mean_normalized_speed: float
    mean_mahalanobis: float
    heading_vel: float             # radians; NaN when undefined
    heading_cnn: float             # radians; NaN when absent/undefined
    review: str = "auto"           # auto | accepted | rejected | flipped

    @property
    def suppression_p(self) -> float:
        return self.mean_mahalanobis * self.mean_speed

    @property
    def size(self) -> int:
        return len(self.cells)


def baseline_classify(stats: StatsMap, threshold: float,
                      occupied_threshold: float = OCCUPIED_THRESHOLD):
    """Mahalanobis score map plus the thresholded dynamic mask.

    The score is defined on occupied cells; everything else scores zero and
    never enters the mask.
    """
    occupied = (stats.occupancy > occupied_threshold) & stats.valid
    scores = np.where(occupied, stats.mahalanobis, 0.0)
    mask = occupied & (scores > threshold)
    return scores, mask


def refine_with_occupancy(prediction, occupied_mask: np.ndarray):
    """Intersect a prediction with the occupied-cell mask.

    Boolean masks are ANDed; float maps are zeroed outside the occupancy.
    Either way the result never adds cells.
    """
    prediction = np.asarray(prediction)
    if prediction.shape != occupied_mask.shape:
        raise ValueError(f"shape mismatch: {prediction.shape} vs "
                         f"{occupied_mask.shape}")
    if prediction.dtype == bool:
        return prediction & occupied_mask
    return np.where(occupied_mask, prediction, 0.0)


def dbscan(mask: np.ndarray, eps: float = 1.5, min_pts: int = 3) -> list[np.ndarray]:
    """Density-based clusters of the true cells of a boolean mask.

    Returns a list of (n, 2) arrays of (row, col) indices; noise cells are
    dropped. The partition depends only on the mask and (eps, min_pts), not
    on enumeration order; clusters are emitted sorted by their first cell.
    """
    pts = np.argwhere(mask)
    n = len(pts)
    if n == 0:
        return []
    # pairwise neighborhoods; dynamic masks are small so O(n^2) is fine
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    neigh = d2 <= eps * eps
    core = neigh.sum(axis=1) >= min_pts  # neighborhood includes the point itself
    labels = np.full(n, -1, dtype=np.int64)
    cluster = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        # grow from this core point over density-reachable cells
        labels[i] = cluster
        frontier = [i]
        while frontier:
            j = frontier.pop()
            if not core[j]:
                continue
            for k in np.flatnonzero(neigh[j]):
                if labels[k] == -1:
                    labels[k] = cluster
                    frontier.append(k)
        cluster += 1
    out = []
    for c in range(cluster):
        members = pts[labels == c]
        order = np.lexsort((members[:, 1], members[:, 0]))
        out.append(members[order])
    out.sort(key=lambda m: (int(m[0, 0]), int(m[0, 1])))
    return out


def convex_hull(points) -> list[tuple[int, int]]:
    """Monotone-chain convex hull; degenerate inputs return their extremes."""
    pts = sorted({(int(p[0]), int(p[1])) for p in points})
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def point_in_hull(point, hull) -> bool:
    if len(hull) == 1:
        return tuple(point) == tuple(hull[0])
    if len(hull) == 2:
        (r0, c0), (r1, c1) = hull
        cr = (r1 - r0) * (point[1] - c0) - (c1 - c0) * (point[0] - r0)
        if cr != 0:
            return False
        return min(r0, r1) <= point[0] <= max(r0, r1) and \
            min(c0, c1) <= point[1] <= max(c0, c1)
    sign = 0
    n = len(hull)
    for i in range(n):
        a, b = hull[i], hull[(i + 1) % n]
        cr = (b[0] - a[0]) * (point[1] - a[1]) - (b[1] - a[1]) * (point[0] - a[0])
        if cr != 0:
            if sign == 0:
                sign = 1 if cr > 0 else -1
            elif (cr > 0) != (sign > 0):
                return False
    return True


def orientation_velocity(cells, stats: StatsMap) -> float:
    """Cluster heading from the mean cell velocities (quadrant-correct)."""
    rows = cells[:, 0]
    cols = cells[:, 1]
    mvx = float(np.mean(stats.mean_vx[rows, cols]))
    mvy = float(np.mean(stats.mean_vy[rows, cols]))
    if abs(mvx) < HEADING_EPS and abs(mvy) < HEADING_EPS:
        return math.nan
    return math.atan2(mvy, mvx)


def orientation_cnn(cells, sin_map: np.ndarray, cos_map: np.ndarray) -> float:
    """Cluster heading from the mean of the regressed sine/cosine maps."""
    rows = cells[:, 0]
    cols = cells[:, 1]
    ms = float(np.mean(sin_map[rows, cols]))
    mc = float(np.mean(cos_map[rows, cols]))
    if math.hypot(ms, mc) < HEADING_EPS:
        return math.nan
    return math.atan2(ms, mc)


def make_clusters(mask: np.ndarray, stats: StatsMap,
                  db: DbscanConfig = DbscanConfig(),
                  sin_map: np.ndarray = None,
                  cos_map: np.ndarray = None) -> list[LabeledCluster]:
    """Cluster a dynamic mask and attach per-cluster statistics and headings."""
    clusters = []
    for cid, cells in enumerate(dbscan(mask, db.eps, db.min_pts)):
        rows, cols = cells[:, 0], cells[:, 1]
        nspeed = np.hypot(stats.vx_norm[rows, cols], stats.vy_norm[rows, cols])
        clusters.append(LabeledCluster(
            cluster_id=cid,
            cells=[(int(r), int(c)) for r, c in cells],
            hull=convex_hull(cells),
            mean_speed=float(np.mean(stats.speed[rows, cols])),
            mean_normalized_speed=float(np.mean(nspeed)),
            mean_mahalanobis=float(np.mean(stats.mahalanobis[rows, cols])),
            heading_vel=orientation_velocity(cells, stats),
            heading_cnn=orientation_cnn(cells, sin_map, cos_map)
            if sin_map is not None else math.nan,
        ))
    return clusters


# -- line-delimited cluster records ---------------------------------------------------


def cluster_record(cluster: LabeledCluster, frame_id: str) -> dict:
    return {
        "frame_id": frame_id,
        "cluster_id": cluster.cluster_id,
        "n_cells": cluster.size,
        "cells": [list(c) for c in cluster.cells],
        "hull": [list(v) for v in cluster.hull],
        "mean_speed": cluster.mean_speed,
        "mean_normalized_speed": cluster.mean_normalized_speed,
        "mean_mahalanobis": cluster.mean_mahalanobis,
        "suppression_p": cluster.suppression_p,
        "heading_vel": cluster.heading_vel,
        "heading_cnn": cluster.heading_cnn,
        "review": cluster.review,
    }


def cluster_from_record(rec: dict) -> LabeledCluster:
    return LabeledCluster(
        cluster_id=rec["cluster_id"],
        cells=[tuple(c) for c in rec["cells"]],
        hull=[tuple(v) for v in rec["hull"]],
        mean_speed=rec["mean_speed"],
        mean_normalized_speed=rec["mean_normalized_speed"],
        mean_mahalanobis=rec["mean_mahalanobis"],
        heading_vel=rec["heading_vel"],
        heading_cnn=rec["heading_cnn"],
        review=rec.get("review", "auto"),
    )


def _json_default(x):
    if isinstance(x, float) and math.isnan(x):
        return None
    raise TypeError(x)


def write_cluster_records(clusters: list[LabeledCluster], frame_id: str, path) -> None:
    with open(path, "w") as fh:
        for cl in clusters:
            rec = cluster_record(cl, frame_id)
            rec = {k: (None if isinstance(v, float) and math.isnan(v) else v)
                   for k, v in rec.items()}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_cluster_records(path) -> list[dict]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            rec = json.loads(line)
            for key in ("heading_vel", "heading_cnn"):
                if rec.get(key) is None:
                    rec[key] = math.nan
            out.append(rec)
    return out
