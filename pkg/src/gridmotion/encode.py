"""Turn a grid map into the network's 3-channel byte image, plus augmentation.

Channel packing (B, G, R):

    combo 1: occupancy(+freespace)   vx          vy
    combo 2: occupancy(+freespace)   vx_norm     vy_norm
    combo 3: occupancy(no freespace) vx_norm     vy_norm
    combo 4: occupancy(+freespace)   speed       overall variance
    combo 5: occupancy(+freespace)   speed       mahalanobis

Signed quantities are clamped to [-t, t] and mapped to byte codes 0..255;
non-negative quantities (speed, variance, mahalanobis) use [0, t]. The
occupancy channel maps [0, 1] to 0..255; without freespace (combo 3) values
are confined to [0.5, 1] first, so no code below the unknown value appears.

The crop sizes {300, 400, 500, 600} are defined on a 600-cell reference
grid and are scaled proportionally for smaller grids (600 = no zoom).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import DynamicGridMap, StatsMap
from .sim import LABEL_STATIC

RANGE_CHOICES = (5, 10, 15, 20, 25)
CROP_CHOICES = (300, 400, 500, 600)
CROP_REFERENCE = 600
ROTATION_STEP_DEG = 10
UNKNOWN_CODE = 128  # byte code of occupancy 0.5 and of zero signed velocity


@dataclass(frozen=True)
class EncoderConfig:
    combo: int = 2
    range_t: int = 20
    crop: int = 600
    include_freespace: bool = True
    occupied_threshold: float = 0.6

    def __post_init__(self):
        if self.combo not in (1, 2, 3, 4, 5):
            raise ValueError(f"combo must be 1..5, got {self.combo}")
        if self.range_t not in RANGE_CHOICES:
            raise ValueError(f"range_t must be one of {RANGE_CHOICES}")
        if self.crop not in CROP_CHOICES:
            raise ValueError(f"crop must be one of {CROP_CHOICES}")
        if self.combo == 3 and self.include_freespace:
            raise ValueError("combo 3 excludes freespace information")

    def effective_crop(self, side: int) -> int:
        return max(1, round(side * self.crop / CROP_REFERENCE))


@dataclass
class EncodedFrame:
    """3-channel byte image with label, heading and occupancy sidecars."""

    channels: np.ndarray        # uint8 (3, S, S)
    labels: np.ndarray          # int8  (S, S): 0 static, 1 dynamic, -1 ignore
    heading: np.ndarray         # float64 (S, S), NaN off the dynamic support
    occupied_mask: np.ndarray   # bool (S, S)
    combo: int
    range_t: int

    @property
    def side(self) -> int:
        return self.channels.shape[1]

    def copy(self) -> "EncodedFrame":
        return EncodedFrame(self.channels.copy(), self.labels.copy(),
                            self.heading.copy(), self.occupied_mask.copy(),
                            self.combo, self.range_t)


# -- quantization -------------------------------------------------------------------


def _round_half_up(x):
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


def discretize(value, t) -> np.ndarray:
    """Clamp to [-t, t], map linearly to 0..255, round half up."""
    v = np.clip(np.asarray(value, dtype=np.float64), -t, t)
    code = _round_half_up((v + t) / (2.0 * t) * 255.0)
    out = code.astype(np.uint8)
    return out if out.ndim else int(out)


def discretize_nonneg(value, t) -> np.ndarray:
    """Clamp to [0, t], map linearly to 0..255, round half up."""
    v = np.clip(np.asarray(value, dtype=np.float64), 0.0, t)
    out = _round_half_up(v / t * 255.0).astype(np.uint8)
    return out if out.ndim else int(out)


def _decode_signed(code, t):
    return np.asarray(code, dtype=np.float64) / 255.0 * 2.0 * t - t


def _decode_nonneg(code, t):
    return np.asarray(code, dtype=np.float64) / 255.0 * t


def _encode_occupancy(occ, include_freespace: bool):
    occ = np.asarray(occ, dtype=np.float64)
    if not include_freespace:
        occ = np.clip(occ, 0.5, 1.0)
    return _round_half_up(np.clip(occ, 0.0, 1.0) * 255.0).astype(np.uint8)


def _decode_occupancy(code):
    return np.asarray(code, dtype=np.float64) / 255.0


# -- encoding -----------------------------------------------------------------------


def encode(gmap: DynamicGridMap, stats: StatsMap, config: EncoderConfig,
           labels: np.ndarray | None = None,
           heading: np.ndarray | None = None) -> EncodedFrame:
    """Encode a map + stats into the network input; attach ground truth if given."""
    s = gmap.spec.side_cells
    occ = gmap.occupancy
    occupied = occ > config.occupied_threshold
    show = occupied & stats.valid
    t = config.range_t

    b = _encode_occupancy(occ, config.include_freespace)
    if config.combo == 1:
        g = np.where(show, discretize(stats.mean_vx, t), discretize(0.0, t))
        r = np.where(show, discretize(stats.mean_vy, t), discretize(0.0, t))
    elif config.combo in (2, 3):
        g = np.where(show, discretize(stats.vx_norm, t), discretize(0.0, t))
        r = np.where(show, discretize(stats.vy_norm, t), discretize(0.0, t))
    elif config.combo == 4:
        g = np.where(show, discretize_nonneg(stats.speed, t), 0)
        r = np.where(show, discretize_nonneg(stats.overall_var, t), 0)
    else:  # combo 5
        g = np.where(show, discretize_nonneg(stats.speed, t), 0)
        r = np.where(show, discretize_nonneg(stats.mahalanobis, t), 0)

    channels = np.stack([b, g, r]).astype(np.uint8)
    if labels is None:
        labels = np.full((s, s), LABEL_STATIC, dtype=np.int8)
    if heading is None:
        heading = np.full((s, s), np.nan, dtype=np.float64)
    frame = EncodedFrame(channels, labels.astype(np.int8), heading.astype(np.float64),
                         occupied, config.combo, config.range_t)
    crop = config.effective_crop(s)
    if crop != s:
        frame = crop_zoom(frame, crop)
    return frame


# -- zoom ---------------------------------------------------------------------------


def _bilinear_resize(img: np.ndarray, out_side: int) -> np.ndarray:
    """Resize a 2-D float array with bilinear interpolation (pixel-center aligned)."""
    in_side = img.shape[0]
    if in_side == out_side:
        return img.copy()
    scale = in_side / out_side
    coords = (np.arange(out_side) + 0.5) * scale - 0.5
    c0 = np.floor(coords).astype(int)
    frac = coords - c0
    c0 = np.clip(c0, 0, in_side - 1)
    c1 = np.clip(c0 + 1, 0, in_side - 1)
    ry, fy = c0[:, None], frac[:, None]
    ry1 = c1[:, None]
    top = img[ry, c0[None, :]] * (1 - frac[None, :]) + img[ry, c1[None, :]] * frac[None, :]
    bot = img[ry1, c0[None, :]] * (1 - frac[None, :]) + img[ry1, c1[None, :]] * frac[None, :]
    return top * (1 - fy) + bot * fy


def _nearest_resize(img: np.ndarray, out_side: int) -> np.ndarray:
    in_side = img.shape[0]
    if in_side == out_side:
        return img.copy()
    idx = np.minimum((np.arange(out_side) + 0.5) * in_side / out_side, in_side - 1)
    idx = idx.astype(int)
    return img[np.ix_(idx, idx)]


def crop_zoom(frame: EncodedFrame, crop: int) -> EncodedFrame:
    """Central crop of `crop` cells per edge, scaled back to the source size."""
    side = frame.side
    if crop > side:
        raise ValueError(f"crop {crop} exceeds frame side {side}")
    lo = (side - crop) // 2
    hi = lo + crop
    win = slice(lo, hi)
    channels = np.stack([
        np.clip(_round_half_up(_bilinear_resize(
            frame.channels[k, win, win].astype(np.float64), side)), 0, 255)
        for k in range(3)
    ]).astype(np.uint8)
    labels = _nearest_resize(frame.labels[win, win], side)
    heading = _nearest_resize(frame.heading[win, win], side)
    occupied = _nearest_resize(frame.occupied_mask[win, win], side)
    return EncodedFrame(channels, labels, heading, occupied,
                        frame.combo, frame.range_t)


# -- rotation augmentation ------------------------------------------------------------


def _corner_fill_codes(combo: int, t: int):
    occ_code = UNKNOWN_CODE
    if combo in (1, 2, 3):
        zero = int(discretize(0.0, t))
        return occ_code, zero, zero
    return occ_code, 0, 0


def _rotate_nearest(img: np.ndarray, angle_rad: float, fill):
    """Rotate about the array center, +angle = counterclockwise in (x up-row, y) world."""
    s = img.shape[0]
    c = (s - 1) / 2.0
    jj, ii = np.meshgrid(np.arange(s), np.arange(s))
    # inverse map: source = R(-angle) applied to target offsets (row ~ y, col ~ x)
    cos, sin = math.cos(angle_rad), math.sin(angle_rad)
    x = jj - c
    y = ii - c
    src_x = cos * x + sin * y
    src_y = -sin * x + cos * y
    sj = np.rint(src_x + c).astype(int)
    si = np.rint(src_y + c).astype(int)
    inside = (si >= 0) & (si < s) & (sj >= 0) & (sj < s)
    out = np.full_like(img, fill)
    out[inside] = img[si[inside], sj[inside]]
    return out, inside


def _rotate_bilinear(img: np.ndarray, angle_rad: float, fill: float):
    s = img.shape[0]
    c = (s - 1) / 2.0
    jj, ii = np.meshgrid(np.arange(s), np.arange(s))
    cos, sin = math.cos(angle_rad), math.sin(angle_rad)
    x = jj - c
    y = ii - c
    src_x = cos * x + sin * y + c
    src_y = -sin * x + cos * y + c
    inside = (src_x >= 0) & (src_x <= s - 1) & (src_y >= 0) & (src_y <= s - 1)
    x0 = np.clip(np.floor(src_x).astype(int), 0, s - 1)
    y0 = np.clip(np.floor(src_y).astype(int), 0, s - 1)
    x1 = np.clip(x0 + 1, 0, s - 1)
    y1 = np.clip(y0 + 1, 0, s - 1)
    fx = np.clip(src_x - x0, 0.0, 1.0)
    fy = np.clip(src_y - y0, 0.0, 1.0)
    val = (img[y0, x0] * (1 - fx) * (1 - fy) + img[y0, x1] * fx * (1 - fy)
           + img[y1, x0] * (1 - fx) * fy + img[y1, x1] * fx * fy)
    return np.where(inside, val, fill), inside


def rotate_augment(frame: EncodedFrame, angle_deg: int) -> EncodedFrame:
    """Rotate the frame counterclockwise by a multiple of 10 degrees.

    Vector channels (combos 1-3) are co-rotated with the image; scalar
    channels only move spatially. Exposed corners get the unknown occupancy
    code and the zero code on the value channels; corner labels are static.
    The heading mask is shifted by the angle modulo 2 pi.
    """
    if angle_deg % ROTATION_STEP_DEG != 0 or not (0 <= angle_deg < 360):
        raise ValueError("angle must be a multiple of 10 in [0, 350]")
    if angle_deg == 0:
        return frame.copy()
    ang = math.radians(angle_deg)
    t = frame.range_t
    occ_fill, g_fill, r_fill = _corner_fill_codes(frame.combo, t)

    quarter = angle_deg % 90 == 0
    # with row ~ +y, a counterclockwise world rotation is rot90 with negative k
    k = -(angle_deg // 90)

    def rot_scalar_codes(codes, fill):
        if quarter:
            return np.rot90(codes, k)
        out, _ = _rotate_bilinear(codes.astype(np.float64), ang, float(fill))
        return np.clip(_round_half_up(out), 0, 255).astype(np.uint8)

    b = rot_scalar_codes(frame.channels[0], occ_fill)

    if frame.combo in (1, 2, 3):
        gx = _decode_signed(frame.channels[1], t)
        gy = _decode_signed(frame.channels[2], t)
        if quarter:
            gx_r = np.rot90(gx, k)
            gy_r = np.rot90(gy, k)
        else:
            gx_r, _ = _rotate_bilinear(gx, ang, 0.0)
            gy_r, _ = _rotate_bilinear(gy, ang, 0.0)
        cos, sin = math.cos(ang), math.sin(ang)
        vx_new = cos * gx_r - sin * gy_r
        vy_new = sin * gx_r + cos * gy_r
        g = discretize(vx_new, t)
        r = discretize(vy_new, t)
    else:
        g = rot_scalar_codes(frame.channels[1], g_fill)
        r = rot_scalar_codes(frame.channels[2], r_fill)

    if quarter:
        labels = np.rot90(frame.labels, k).copy()
        heading = np.rot90(frame.heading, k).copy()
        occupied = np.rot90(frame.occupied_mask, k).copy()
    else:
        labels, _ = _rotate_nearest(frame.labels, ang, LABEL_STATIC)
        heading, _ = _rotate_nearest(frame.heading, ang, np.nan)
        occupied, _ = _rotate_nearest(frame.occupied_mask, ang, False)
    heading = np.where(np.isnan(heading), np.nan, np.mod(heading + ang, 2.0 * math.pi))

    return EncodedFrame(np.stack([b, g, r]).astype(np.uint8), labels.astype(np.int8),
                        heading, occupied.astype(bool), frame.combo, frame.range_t)


def augment_rotations(frame: EncodedFrame) -> list[EncodedFrame]:
    """All 36 rotated variants (0, 10, ..., 350 degrees) of one frame."""
    return [rotate_augment(frame, a) for a in range(0, 360, ROTATION_STEP_DEG)]


# -- dataset files ------------------------------------------------------------------


def save_encoded(frame: EncodedFrame, directory, frame_id: str) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    np.save(d / f"{frame_id}.channels.npy", frame.channels)
    np.save(d / f"{frame_id}.labels.npy", frame.labels)
    np.save(d / f"{frame_id}.heading.npy", frame.heading)
    np.save(d / f"{frame_id}.occupied.npy", frame.occupied_mask)
    meta = {"combo": frame.combo, "range_t": frame.range_t}
    (d / f"{frame_id}.meta.json").write_text(json.dumps(meta, sort_keys=True))


def load_encoded(directory, frame_id: str) -> EncodedFrame:
    d = Path(directory)
    meta = json.loads((d / f"{frame_id}.meta.json").read_text())
    return EncodedFrame(
        channels=np.load(d / f"{frame_id}.channels.npy"),
        labels=np.load(d / f"{frame_id}.labels.npy"),
        heading=np.load(d / f"{frame_id}.heading.npy"),
        occupied_mask=np.load(d / f"{frame_id}.occupied.npy"),
        combo=meta["combo"], range_t=meta["range_t"],
    )


def network_input(frame: EncodedFrame, dtype=np.float32) -> np.ndarray:
    """Float (3, S, S) tensor scaled to [0, 1] for the network."""
    return (frame.channels.astype(dtype) / np.asarray(255.0, dtype=dtype))
