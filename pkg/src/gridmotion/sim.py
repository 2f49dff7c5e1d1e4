"""Synthetic world (vehicles, pedestrians, walls, clutter) and ray-cast sensor.

The sensor sits at the grid center and sweeps beams over the full circle.
Along each beam, cells before the first object hit get free-space evidence,
the hit cell gets occupied evidence, and everything behind the hit stays at
the uninformed (0.5, 0.5) pair. Clutter objects are short-lived phantom
returns that drift with a randomized per-step velocity, so the filter builds
confidently wrong velocity estimates for them; the ground truth always labels
them static.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .grid import GridSpec

MOVING_SPEED_THRESHOLD = 0.1  # m/s; below this an object counts as non-moving

LABEL_STATIC = 0
LABEL_DYNAMIC = 1
LABEL_IGNORE = -1


class MeasurementGrid:
    """Per-cell inverse-sensor likelihood pairs (l_occ, l_free) in [0, 1]."""

    def __init__(self, l_occ: np.ndarray, l_free: np.ndarray):
        self.l_occ = np.asarray(l_occ, dtype=np.float64)
        self.l_free = np.asarray(l_free, dtype=np.float64)
        if self.l_occ.shape != self.l_free.shape:
            raise ValueError("likelihood grids must share a shape")

    @classmethod
    def unknown(cls, side: int) -> "MeasurementGrid":
        half = np.full((side, side), 0.5)
        return cls(half.copy(), half.copy())

    def occupancy_probability(self) -> np.ndarray:
        """Normalized measured occupancy l_occ / (l_occ + l_free)."""
        den = self.l_occ + self.l_free
        return np.where(den > 0, self.l_occ / np.where(den > 0, den, 1.0), 0.5)


@dataclass
class ScenarioObject:
    """One rectangular object. Heading in radians, speed along the heading."""

    kind: str                      # vehicle | pedestrian | wall | clutter
    length: float
    width: float
    x: float
    y: float
    heading: float = 0.0
    speed: float = 0.0
    motion: str = "constant-velocity"   # constant-velocity | stationary | waypoints
    waypoints: list = field(default_factory=list)
    _wp_index: int = 0
    ttl: int = -1                  # clutter lifetime in steps; -1 = immortal

    def velocity(self) -> tuple[float, float]:
        if self.motion == "stationary" or self.speed == 0.0:
            return 0.0, 0.0
        return self.speed * math.cos(self.heading), self.speed * math.sin(self.heading)

    def is_moving(self) -> bool:
        if self.motion == "stationary":
            return False
        if self.motion == "waypoints" and self._wp_index >= len(self.waypoints):
            return False
        return self.speed > MOVING_SPEED_THRESHOLD


@dataclass
class ClutterConfig:
    count: int = 0
    speed_min: float = 2.0
    speed_max: float = 12.0
    life_min: int = 4
    life_max: int = 12
    size: float = 0.6
    heading_jitter: float = 0.25  # radians of per-step direction wobble


class Scenario:
    """Object list plus a seeded RNG driving clutter respawn and phantom motion."""

    def __init__(self, objects, clutter: ClutterConfig | None = None,
                 seed: int = 0, name: str = "scenario",
                 extent: float | None = None):
        self.name = name
        self.objects = list(objects)
        self.clutter = clutter or ClutterConfig()
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.extent = extent  # world edge length used for clutter spawning
        self.time = 0.0
        for _ in range(self.clutter.count):
            self.objects.append(self._spawn_clutter())

    def _spawn_clutter(self) -> ScenarioObject:
        cfg = self.clutter
        half = (self.extent or 40.0) / 2.0 - 1.0
        return ScenarioObject(
            kind="clutter", length=cfg.size, width=cfg.size,
            x=float(self.rng.uniform(-half, half)),
            y=float(self.rng.uniform(-half, half)),
            heading=float(self.rng.uniform(0.0, 2.0 * math.pi)),
            speed=float(self.rng.uniform(cfg.speed_min, cfg.speed_max)),
            motion="constant-velocity",
            ttl=int(self.rng.integers(cfg.life_min, cfg.life_max + 1)),
        )


def step_world(scenario: Scenario, dt: float) -> Scenario:
    """Advance every object by its motion model. Mutates and returns the scenario."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    rng = scenario.rng
    jitter = scenario.clutter.heading_jitter
    for i, obj in enumerate(scenario.objects):
        if obj.kind == "clutter":
            # phantom return: the velocity is re-randomized every step (speed
            # and direction wobble) around a per-life base direction, so the
            # filter converges on a confident but fictitious motion
            obj.heading += float(rng.uniform(-jitter, jitter))
            step_speed = float(rng.uniform(scenario.clutter.speed_min,
                                           scenario.clutter.speed_max))
            obj.x += step_speed * math.cos(obj.heading) * dt
            obj.y += step_speed * math.sin(obj.heading) * dt
            obj.ttl -= 1
            if obj.ttl == 0:
                scenario.objects[i] = scenario._spawn_clutter()
            continue
        if obj.motion == "stationary":
            continue
        if obj.motion == "waypoints":
            _advance_waypoint(obj, dt)
            continue
        vx, vy = obj.velocity()
        obj.x += vx * dt
        obj.y += vy * dt
    scenario.time += dt
    return scenario


def _advance_waypoint(obj: ScenarioObject, dt: float) -> None:
    remaining = obj.speed * dt
    while remaining > 0 and obj._wp_index < len(obj.waypoints):
        tx, ty = obj.waypoints[obj._wp_index]
        dist = math.hypot(tx - obj.x, ty - obj.y)
        if dist < 1e-9:
            obj._wp_index += 1
            continue
        obj.heading = math.atan2(ty - obj.y, tx - obj.x)
        if dist <= remaining:
            obj.x, obj.y = tx, ty
            remaining -= dist
            obj._wp_index += 1
        else:
            obj.x += (tx - obj.x) / dist * remaining
            obj.y += (ty - obj.y) / dist * remaining
            remaining = 0.0


# -- rasterization & sensor ---------------------------------------------------------


def object_mask(scenario: Scenario, spec: GridSpec,
                include=None) -> np.ndarray:
    """Boolean (S, S) mask of cells whose centers lie inside any object footprint."""
    centers = spec.cell_centers()
    mask = np.zeros(centers.shape[:2], dtype=bool)
    for obj in scenario.objects:
        if include is not None and not include(obj):
            continue
        dx = centers[..., 0] - obj.x
        dy = centers[..., 1] - obj.y
        c, s = math.cos(obj.heading), math.sin(obj.heading)
        u = c * dx + s * dy
        v = -s * dx + c * dy
        mask |= (np.abs(u) <= obj.length / 2.0) & (np.abs(v) <= obj.width / 2.0)
    return mask


def render_measurement(scenario: Scenario, spec: GridSpec, beams: int = 360,
                       hit_pair=(0.85, 0.15), free_pair=(0.15, 0.85)) -> MeasurementGrid:
    """Ray-cast inverse sensor model from the grid center.

    Per beam, the first cell containing any object is the hit; cells between
    the sensor and the hit get the free pair; cells behind the hit keep
    (0.5, 0.5). Without a hit the whole beam is free space.
    """
    if beams < 16:
        raise ValueError("beams must be >= 16")
    s = spec.side_cells
    solid = object_mask(scenario, spec)

    step = spec.cell_size * 0.35
    max_range = spec.extent / 2.0 * math.sqrt(2.0)
    n_steps = int(max_range / step) + 1
    angles = np.arange(beams) * (2.0 * math.pi / beams)
    ts = (np.arange(n_steps) + 1.0) * step
    ox, oy = spec.origin
    xs = ox + np.outer(np.cos(angles), ts)     # (beams, n_steps)
    ys = oy + np.outer(np.sin(angles), ts)
    row, col = spec.cell_of(xs, ys)
    inside = spec.in_bounds(row, col)
    flat = np.where(inside, row * s + col, 0)
    hit = np.where(inside, solid.ravel()[flat], False)

    # per beam: index of first hit sample (n_steps when no hit)
    first_hit = np.where(hit.any(axis=1), hit.argmax(axis=1), n_steps)
    sample_idx = np.arange(n_steps)[None, :]
    free_sel = inside & (sample_idx < first_hit[:, None])
    hit_sel = inside & (sample_idx == first_hit[:, None])

    l_occ = np.full(s * s, 0.5)
    l_free = np.full(s * s, 0.5)
    l_occ[flat[free_sel]] = free_pair[0]
    l_free[flat[free_sel]] = free_pair[1]
    # hits override free evidence (a hit cell grazed by another beam stays a hit)
    l_occ[flat[hit_sel]] = hit_pair[0]
    l_free[flat[hit_sel]] = hit_pair[1]
    return MeasurementGrid(l_occ.reshape(s, s), l_free.reshape(s, s))


def ground_truth(scenario: Scenario, spec: GridSpec):
    """Label mask (static/dynamic) and heading mask (radians, NaN off-support).

    A cell is dynamic iff covered by a non-clutter object moving faster than
    the threshold; the heading mask carries that object's motion direction.
    """
    s = spec.side_cells
    labels = np.full((s, s), LABEL_STATIC, dtype=np.int8)
    heading = np.full((s, s), np.nan, dtype=np.float64)
    centers = spec.cell_centers()
    for obj in scenario.objects:
        if obj.kind == "clutter" or not obj.is_moving():
            continue
        dx = centers[..., 0] - obj.x
        dy = centers[..., 1] - obj.y
        c, si = math.cos(obj.heading), math.sin(obj.heading)
        u = c * dx + si * dy
        v = -si * dx + c * dy
        inside = (np.abs(u) <= obj.length / 2.0) & (np.abs(v) <= obj.width / 2.0)
        labels[inside] = LABEL_DYNAMIC
        heading[inside] = obj.heading % (2.0 * math.pi)
    return labels, heading


# -- scenario files -----------------------------------------------------------------

_SCENARIO_DIR = Path(__file__).parent / "scenarios"


def load_scenario(source, extent: float | None = None, seed: int | None = None) -> Scenario:
    """Load a scenario description from a YAML file or a canned scenario name."""
    path = Path(source)
    if not path.exists():
        path = _SCENARIO_DIR / f"{source}.yaml"
        if not path.exists():
            raise FileNotFoundError(f"no scenario file or canned scenario '{source}'")
    data = yaml.safe_load(path.read_text())
    objects = []
    for entry in data.get("objects", []):
        objects.append(ScenarioObject(
            kind=entry["kind"],
            length=float(entry.get("length", 1.0)),
            width=float(entry.get("width", 1.0)),
            x=float(entry.get("x", 0.0)),
            y=float(entry.get("y", 0.0)),
            heading=math.radians(float(entry.get("heading_deg", 0.0)))
            if "heading_deg" in entry else float(entry.get("heading", 0.0)),
            speed=float(entry.get("speed", 0.0)),
            motion=entry.get("motion", "constant-velocity"),
            waypoints=[tuple(map(float, wp)) for wp in entry.get("waypoints", [])],
        ))
    ccfg = data.get("clutter", {}) or {}
    clutter = ClutterConfig(
        count=int(ccfg.get("count", 0)),
        speed_min=float(ccfg.get("speed_min", 2.0)),
        speed_max=float(ccfg.get("speed_max", 12.0)),
        life_min=int(ccfg.get("life_min", 4)),
        life_max=int(ccfg.get("life_max", 12)),
        size=float(ccfg.get("size", 0.6)),
        heading_jitter=float(ccfg.get("heading_jitter", 0.25)),
    )
    return Scenario(objects, clutter,
                    seed=int(data.get("seed", 0)) if seed is None else seed,
                    name=data.get("name", path.stem),
                    extent=extent)


def canned_scenarios() -> list[str]:
    return sorted(p.stem for p in _SCENARIO_DIR.glob("*.yaml"))
