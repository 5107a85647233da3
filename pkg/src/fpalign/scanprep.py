"""Turn a panorama point cloud into top-down evidence rasters.

A scan becomes a :class:`ScanEvidence`: point evidence ``P`` in [0, 1], a
free-space mask from 2-D ray casting, door pixels, and the pixel the scanner
stood on. Pre-rendered evidence packs (PNG + JSON sidecar) are loaded the
same way, so synthetic scenes skip the point-cloud stage entirely.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from . import raster


class EstimationFailed(ValueError):
    """A geometric estimate (vertical, floor, Manhattan frame, evidence) has no support."""


@dataclass(frozen=True, eq=False)
class ScanEvidence:
    point_ev: np.ndarray
    free_space: np.ndarray
    doors: np.ndarray
    origin_px: tuple[int, int]
    meters_per_pixel: float
    scan_id: str = "scan"

    def __post_init__(self):
        p = raster.check_gray(self.point_ev)
        shapes = {p.shape, self.free_space.shape, self.doors.shape}
        if len(shapes) != 1:
            raise ValueError(f"evidence rasters disagree in shape: {shapes}")
        x, y = (int(v) for v in self.origin_px)
        object.__setattr__(self, "origin_px", (x, y))
        object.__setattr__(self, "meters_per_pixel", float(self.meters_per_pixel))
        h, w = p.shape
        if not (0 <= x < w and 0 <= y < h):
            raise ValueError("scanner origin lies outside the evidence raster")
        if not self.free_space[y, x]:
            raise ValueError("scanner origin must lie in free space")
        if (self.doors & (p <= 0)).any():
            raise ValueError("door pixels must carry point evidence")
        if self.meters_per_pixel <= 0:
            raise ValueError("meters_per_pixel must be positive")
        for a in (self.point_ev, self.free_space, self.doors):
            a.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.point_ev.shape

    def rotated(self, k: int) -> "ScanEvidence":
        """The same scan turned by ``k`` quarter-turns, origin carried along."""
        k %= 4
        ox, oy = raster.rotate_point(*self.origin_px, self.shape, k)
        return ScanEvidence(
            raster.rotate_quarter(self.point_ev, k),
            raster.rotate_quarter(self.free_space, k),
            raster.rotate_quarter(self.doors, k),
            (ox, oy), self.meters_per_pixel, self.scan_id,
        )


@dataclass(frozen=True)
class EvidenceParams:
    band_low: float = 0.1
    band_high: float = 2.5
    percentile: float = 98.0
    border: int = 2
    wall_threshold: float = 0.25
    door_min_m: float = 0.7
    door_max_m: float = 1.2
    door_min_run_m: float = 0.3
    door_side_px: int = 2


# --- point clouds ------------------------------------------------------------

def read_ply(path: str | Path) -> np.ndarray:
    """x, y, z of every vertex in an ASCII or binary PLY file."""
    from plyfile import PlyData

    v = PlyData.read(str(path))["vertex"]
    pts = np.column_stack([np.asarray(v[c], dtype=np.float64) for c in ("x", "y", "z")])
    if pts.size == 0:
        raise ValueError(f"{path}: point cloud is empty")
    if not np.isfinite(pts).all():
        raise ValueError(f"{path}: non-finite coordinates")
    return pts


def write_ply(path: str | Path, points: np.ndarray, binary: bool = True) -> None:
    from plyfile import PlyData, PlyElement

    pts = np.asarray(points, dtype=np.float32)
    arr = np.empty(len(pts), dtype=[("x", "f4"), ("y", "f4"), ("z", "f4")])
    arr["x"], arr["y"], arr["z"] = pts[:, 0], pts[:, 1], pts[:, 2]
    PlyData([PlyElement.describe(arr, "vertex")], text=not binary).write(str(path))


_AXES = "xyz"


def estimate_vertical_and_floor(points: np.ndarray, bin_m: float = 0.05,
                                floor_fraction: float = 0.2) -> tuple[str, float]:
    """Up axis (``"+z"``, ``"-y"``, ...) and floor height measured along it.

    The up axis is the coordinate axis whose height histogram has the
    sharpest single peak; the sign puts the bulk of the points above that
    peak. The floor is the lowest bin holding ``floor_fraction`` of the
    peak's count.
    """
    pts = np.asarray(points, dtype=np.float64)
    best = None
    for a in range(3):
        h = pts[:, a]
        extent = h.max() - h.min()
        nbins = max(1, int(math.ceil(extent / bin_m)) + 1)
        counts = np.bincount(((h - h.min()) / bin_m).astype(np.int64), minlength=nbins)
        frac = counts.max() / len(h)
        if best is None or frac > best[0]:
            best = (frac, a, extent, counts, h.min())
    _, a, extent, counts, lo = best
    if extent < 1.0:
        raise EstimationFailed("cloud spans less than 1 m along its densest axis")
    peak_center = lo + (counts.argmax() + 0.5) * bin_m
    sign = 1 if pts[:, a].mean() >= peak_center else -1
    h = sign * pts[:, a]
    counts = np.bincount(((h - h.min()) / bin_m).astype(np.int64))
    floor_bin = int(np.nonzero(counts >= floor_fraction * counts.max())[0][0])
    floor = h.min() + (floor_bin + 0.5) * bin_m
    return ("+" if sign > 0 else "-") + _AXES[a], float(floor)


def to_upright(points: np.ndarray, up_axis: str, floor_height: float) -> np.ndarray:
    """Re-express points in a right-handed frame whose third axis is height above the floor."""
    sign = 1 if up_axis[0] == "+" else -1
    a = _AXES.index(up_axis[1])
    b, c = (a + 1) % 3, (a + 2) % 3
    pts = np.asarray(points, dtype=np.float64)
    if sign > 0:
        out = np.column_stack([pts[:, b], pts[:, c], pts[:, a]])
    else:
        out = np.column_stack([pts[:, c], pts[:, b], -pts[:, a]])
    out[:, 2] -= floor_height
    return out


def estimate_manhattan_rotation(points: np.ndarray, up_axis: str = "+z", *,
                                floor_height: float = 0.0, bins: int = 36,
                                radius: float = 0.25, max_points: int = 6000,
                                seed: int = 0) -> float:
    """Dominant horizontal wall direction modulo 90 degrees, in [0, 90)."""
    up = to_upright(points, up_axis, floor_height)
    walls = up[(up[:, 2] > 0.1) & (up[:, 2] < 2.5)][:, :2]
    if len(walls) < 3:
        walls = up[:, :2]
    if len(walls) > max_points:
        idx = np.random.default_rng(seed).choice(len(walls), max_points, replace=False)
        walls = walls[np.sort(idx)]
    pairs = cKDTree(walls).query_pairs(radius, output_type="ndarray")
    if len(pairs) == 0:
        raise EstimationFailed("no neighbouring point pairs to estimate a Manhattan frame")
    d = walls[pairs[:, 1]] - walls[pairs[:, 0]]
    d = d[np.hypot(d[:, 0], d[:, 1]) > 0.02]
    if len(d) == 0:
        raise EstimationFailed("all point pairs are vertically stacked")
    ang = np.degrees(np.arctan2(d[:, 1], d[:, 0])) % 90.0
    hist, edges = np.histogram(ang, bins=bins, range=(0.0, 90.0))
    if hist.max() < 2.0 * hist.mean():
        raise EstimationFailed("no dominant horizontal direction")
    center = 0.5 * (edges[hist.argmax()] + edges[hist.argmax() + 1])
    # refine with a circular mean over the peak's neighbourhood (period 90)
    diff = (ang - center + 45.0) % 90.0 - 45.0
    near = np.abs(diff) <= 90.0 / bins
    theta = center + diff[near].mean()
    return float(theta % 90.0)


def rotate_horizontal(points: np.ndarray, degrees: float) -> np.ndarray:
    t = math.radians(degrees)
    c, s = math.cos(t), math.sin(t)
    out = np.array(points, dtype=np.float64, copy=True)
    x, y = out[:, 0].copy(), out[:, 1].copy()
    out[:, 0] = c * x - s * y
    out[:, 1] = s * x + c * y
    return out


def normalize_cloud(points: np.ndarray) -> np.ndarray:
    """Upright, floor at height 0, walls aligned with the horizontal axes."""
    up, floor = estimate_vertical_and_floor(points)
    theta = estimate_manhattan_rotation(points, up, floor_height=floor)
    return rotate_horizontal(to_upright(points, up, floor), -theta)


# --- evidence rasters ----------------------------------------------------------

def normalize_counts(counts: np.ndarray, percentile: float = 98.0) -> np.ndarray:
    """Scale counts so the given percentile of the nonzero counts maps to 1, then clamp."""
    counts = np.asarray(counts, dtype=np.float64)
    nz = counts[counts > 0]
    if nz.size == 0:
        return np.zeros_like(counts)
    ref = np.percentile(nz, percentile)
    return np.clip(counts / ref, 0.0, 1.0)


def trace_segments(origin: tuple[float, float], ends: np.ndarray, shape: tuple[int, int],
                   step: float = 0.5, chunk: int = 2_000_000) -> np.ndarray:
    """Mask of every pixel sampled along the segments from ``origin`` to each end point.

    Coordinates are continuous (x, y) in pixel units; end pixels are included.
    """
    h, w = shape
    out = np.zeros(shape, dtype=bool)
    ends = np.asarray(ends, dtype=np.float64).reshape(-1, 2)
    if ends.size == 0:
        return out
    ox, oy = origin
    length = np.hypot(ends[:, 0] - ox, ends[:, 1] - oy)
    order = np.argsort(length)
    ends, length = ends[order], length[order]
    batch = max(1, chunk // (int(math.ceil(length[-1] / step)) + 2))
    for i in range(0, len(ends), batch):
        j = min(len(ends), i + batch)
        n = int(math.ceil(length[j - 1] / step)) + 2
        t = np.linspace(0.0, 1.0, n)
        xs = ox + t[None, :] * (ends[i:j, 0:1] - ox)
        ys = oy + t[None, :] * (ends[i:j, 1:2] - oy)
        xi = np.clip(np.floor(xs).astype(np.int64), 0, w - 1)
        yi = np.clip(np.floor(ys).astype(np.int64), 0, h - 1)
        out[yi.ravel(), xi.ravel()] = True
    return out


def open3x3(mask: np.ndarray) -> np.ndarray:
    return ndimage.binary_opening(mask, structure=np.ones((3, 3), dtype=bool))


def make_evidence(points: np.ndarray, meters_per_pixel: float,
                  params: EvidenceParams = EvidenceParams(), scan_id: str = "scan",
                  detect_doors: bool = True) -> ScanEvidence:
    """Rasterize a normalized cloud (floor at 0, Manhattan-aligned) into evidence layers.

    The image is a top-down view: +x to the right, +y up (so image rows grow
    toward -y), which keeps scans and floorplans of the same handedness.
    """
    pts = np.asarray(points, dtype=np.float64)
    band = pts[(pts[:, 2] > params.band_low) & (pts[:, 2] < params.band_high)]
    if len(band) == 0:
        raise EstimationFailed("no points inside the wall height band")
    mpp = float(meters_per_pixel)
    xs = np.append(band[:, 0], 0.0)
    ys = np.append(band[:, 1], 0.0)
    x0 = math.floor(xs.min() / mpp)
    y1 = math.floor(ys.max() / mpp)
    b = params.border
    col = np.floor(band[:, 0] / mpp).astype(np.int64) - x0 + b
    row = y1 - np.floor(band[:, 1] / mpp).astype(np.int64) + b
    w = int(col.max()) + 1 + b
    h = int(row.max()) + 1 + b
    ox = -x0 + b
    oy = y1 + b
    w, h = max(w, ox + 1 + b), max(h, oy + 1 + b)

    counts = np.bincount(row * w + col, minlength=h * w).reshape(h, w)
    point_ev = normalize_counts(counts, params.percentile)

    occupied = np.nonzero(counts.ravel())[0]
    ends = np.column_stack([occupied % w + 0.5, occupied // w + 0.5])
    traced = trace_segments((ox + 0.5, oy + 0.5), ends, (h, w))
    # opening may strip thin rays into corners; ray end pixels stay so every point touches free space
    free = open3x3(traced) | (traced & (counts > 0))
    free[oy, ox] = True
    ev = ScanEvidence(point_ev, free, np.zeros((h, w), dtype=bool), (ox, oy), mpp, scan_id)
    if detect_doors:
        ev = with_doors(ev, detect_doors_scan(ev, params))
    return ev


def scan_to_evidence(points: np.ndarray, meters_per_pixel: float,
                     params: EvidenceParams = EvidenceParams(), scan_id: str = "scan") -> ScanEvidence:
    return make_evidence(normalize_cloud(points), meters_per_pixel, params, scan_id)


def with_doors(ev: ScanEvidence, doors: np.ndarray) -> ScanEvidence:
    return ScanEvidence(ev.point_ev, ev.free_space, doors & (ev.point_ev > 0),
                        ev.origin_px, ev.meters_per_pixel, ev.scan_id)


def _row_door_jambs(wall: np.ndarray, free: np.ndarray, gap_lo: int, gap_hi: int,
                    min_run: int, side: int) -> list[tuple[int, int]]:
    """(row, col) of wall end points flanking door-sized gaps in horizontal wall runs."""
    h, w = wall.shape
    marks = []
    padded = np.zeros((h, w + 2), dtype=np.int8)
    padded[:, 1:-1] = wall
    d = np.diff(padded, axis=1)
    for y in range(h):
        starts = np.nonzero(d[y] == 1)[0]
        stops = np.nonzero(d[y] == -1)[0] - 1
        for r in range(len(starts) - 1):
            left_end, right_start = stops[r], starts[r + 1]
            gap = right_start - left_end - 1
            if not gap_lo <= gap <= gap_hi:
                continue
            if stops[r] - starts[r] + 1 < min_run or stops[r + 1] - starts[r + 1] + 1 < min_run:
                continue
            cols = slice(left_end + 1, right_start)
            if not free[y, cols].all():
                continue
            if y - side < 0 or y + side >= h:
                continue
            if free[y - side, cols].mean() < 0.5 or free[y + side, cols].mean() < 0.5:
                continue
            marks.append((y, int(left_end)))
            marks.append((y, int(right_start)))
    return marks


def detect_doors_scan(ev: ScanEvidence, params: EvidenceParams = EvidenceParams()) -> np.ndarray:
    """Door candidates: door-wide gaps in straight wall runs with free space on both sides."""
    mpp = ev.meters_per_pixel
    wall = ev.point_ev > params.wall_threshold
    free = ev.free_space
    gap_lo = int(math.ceil(params.door_min_m / mpp - 1e-9))
    gap_hi = int(math.floor(params.door_max_m / mpp + 1e-9))
    min_run = max(2, int(round(params.door_min_run_m / mpp)))
    out = np.zeros(ev.shape, dtype=bool)
    for y, x in _row_door_jambs(wall, free, gap_lo, gap_hi, min_run, params.door_side_px):
        out[y, x] = True
    for x, y in _row_door_jambs(wall.T, free.T, gap_lo, gap_hi, min_run, params.door_side_px):
        out[y, x] = True
    return out & (ev.point_ev > 0)


def resample_evidence(ev: ScanEvidence, meters_per_pixel: float) -> ScanEvidence:
    """Nearest-neighbour resampling onto another pixel size (no-op when they agree)."""
    s = ev.meters_per_pixel / meters_per_pixel
    if abs(s - 1.0) < 1e-9:
        return ev
    h, w = ev.shape
    nh, nw = max(1, int(round(h * s))), max(1, int(round(w * s)))
    ri = np.minimum((np.arange(nh) / s).astype(np.int64), h - 1)
    ci = np.minimum((np.arange(nw) / s).astype(np.int64), w - 1)
    p = ev.point_ev[np.ix_(ri, ci)]
    free = ev.free_space[np.ix_(ri, ci)].copy()
    doors = ev.doors[np.ix_(ri, ci)]
    ox = min(nw - 1, int(ev.origin_px[0] * s))
    oy = min(nh - 1, int(ev.origin_px[1] * s))
    free[oy, ox] = True
    return ScanEvidence(np.array(p), free, doors & (p > 0), (ox, oy), meters_per_pixel, ev.scan_id)


# --- evidence packs ------------------------------------------------------------

def save_evidence(ev: ScanEvidence, directory: str | Path, stem: str | None = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    stem = stem or ev.scan_id
    # keep every positive intensity positive after 16-bit quantization
    q = np.round(ev.point_ev * 65535.0)
    q[(ev.point_ev > 0) & (q == 0)] = 1
    raster.save_gray(d / f"{stem}.point.png", q / 65535.0, bits=16)
    raster.save_mask(d / f"{stem}.free.png", ev.free_space)
    raster.save_mask(d / f"{stem}.doors.png", ev.doors)
    meta = {"origin_px": list(ev.origin_px), "meters_per_pixel": ev.meters_per_pixel,
            "scan_id": ev.scan_id}
    (d / f"{stem}.meta.json").write_text(json.dumps(meta, indent=2))


def load_evidence(directory: str | Path, stem: str) -> ScanEvidence:
    d = Path(directory)
    meta = json.loads((d / f"{stem}.meta.json").read_text())
    ox, oy = meta["origin_px"]
    return ScanEvidence(
        raster.load_gray(d / f"{stem}.point.png"),
        raster.load_mask(d / f"{stem}.free.png"),
        raster.load_mask(d / f"{stem}.doors.png"),
        (int(ox), int(oy)), float(meta["meters_per_pixel"]), meta.get("scan_id", stem),
    )


def list_evidence_stems(directory: str | Path) -> list[str]:
    return sorted(p.name[: -len(".meta.json")] for p in Path(directory).glob("*.meta.json"))
