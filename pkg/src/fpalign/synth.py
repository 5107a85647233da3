"""Procedural floorplan/scan scenes with known placements.

A scene is a grid of rectangular rooms with 3 px walls, joined by door gaps
carrying a fixed door glyph. Each room holds one scanner. Furniture disks
that occlude rays but never appear on the floorplan are shared by every
scan; evidence is ray cast against walls and furniture, voxel-counted per
pixel, hit by wall dropout and turned by a random quarter-turn.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import raster
from .energy import Placement
from .floorplan import DoorTemplateSpec, FloorplanConfig, RulerSpec
from .scanprep import ScanEvidence, load_evidence, normalize_counts, open3x3, save_evidence


class GenerationFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    rooms: int = 20
    grid: tuple[int, int] | None = None  # rows, cols
    room_size_range: tuple[float, float] = (3.0, 7.0)
    door_width: float = 0.9
    wall_thickness: int = 3
    clutter_density: float = 0.05
    dropout: float = 0.1
    duplicate_rooms: int = 0
    meters_per_pixel: float = 0.1
    extra_doors: float = 0.3
    symbol_strokes: bool = True
    specks: int = 12
    canvas: int | None = None
    n_rays: int = 4096
    margin: int = 12

    def __post_init__(self):
        if self.rooms < 1:
            raise ValueError("rooms must be >= 1")
        for name in ("clutter_density", "dropout", "extra_doors"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        lo, hi = self.room_size_range
        if not 0 < lo <= hi or self.door_width <= 0 or self.meters_per_pixel <= 0:
            raise ValueError("sizes must be positive")
        if self.wall_thickness < 1:
            raise ValueError("wall_thickness must be >= 1")
        if self.duplicate_rooms < 0 or self.duplicate_rooms == 1:
            raise ValueError("duplicate_rooms must be 0 or >= 2")

    @property
    def layout(self) -> tuple[int, int]:
        if self.grid is not None:
            rows, cols = self.grid
            if rows * cols < self.rooms:
                raise ValueError("grid too small for the room count")
            return rows, cols
        rows = max(1, int(math.floor(math.sqrt(self.rooms))))
        cols = int(math.ceil(self.rooms / rows))
        if self.duplicate_rooms > cols:
            cols = self.duplicate_rooms
            rows = int(math.ceil(self.rooms / cols))
        return rows, cols

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = list(self.grid) if self.grid else None
        d["room_size_range"] = list(self.room_size_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        if d.get("grid") is not None:
            d["grid"] = tuple(d["grid"])
        if "room_size_range" in d:
            d["room_size_range"] = tuple(d["room_size_range"])
        return cls(**d)


@dataclass
class GroundTruth:
    placements: dict[str, Placement]
    rooms: dict[str, int] = field(default_factory=dict)
    tolerance_px: int = 3

    def to_dict(self) -> dict:
        return {"tolerance_px": self.tolerance_px,
                "scans": [{"scan_id": s, **p.to_dict(), "room": self.rooms.get(s)}
                          for s, p in self.placements.items()]}

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        pl = {s["scan_id"]: Placement(int(s["k"]), int(s["tx"]), int(s["ty"])) for s in d["scans"]}
        rooms = {s["scan_id"]: s["room"] for s in d["scans"] if s.get("room") is not None}
        return cls(pl, rooms, int(d.get("tolerance_px", 3)))


@dataclass
class Scene:
    floorplan: np.ndarray
    config: FloorplanConfig
    scans: list[ScanEvidence]
    gt: GroundTruth
    room_labels: np.ndarray  # 0 outside rooms, i+1 inside room i
    walls: np.ndarray        # architectural occupancy used by the ray caster
    door_boxes: list[tuple[int, int, int, int]]  # x, y, w, h of each stamped glyph
    door_marks: np.ndarray | None = None  # overrides detected floorplan doors when set
    clutter: np.ndarray | None = None     # furniture occupancy seen by scans only

    @property
    def meters_per_pixel(self) -> float:
        return self.scans[0].meters_per_pixel if self.scans else float("nan")


# --- drawing -------------------------------------------------------------------------

def door_glyph(door_px: int, wall: int) -> np.ndarray:
    """Door symbol for a horizontal wall opening downward: 2 px jamb each side, leaf, quarter arc."""
    h, w = wall + door_px, door_px + 4
    g = np.ones((h, w))
    g[:wall, :2] = 0.0
    g[:wall, w - 2:] = 0.0
    g[wall:wall + door_px, 2] = 0.0
    cx, cy = 2, wall - 1
    theta = np.linspace(0.0, math.pi / 2, 8 * door_px)
    xs = np.round(cx + door_px * np.sin(theta)).astype(int)
    ys = np.round(cy + door_px * np.cos(theta)).astype(int)
    ok = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    g[ys[ok], xs[ok]] = 0.0
    return g


def _orient(glyph: np.ndarray, vertical: bool, flip_open: bool, flip_hinge: bool) -> np.ndarray:
    g = glyph
    if flip_hinge:
        g = g[:, ::-1]
    if flip_open:
        g = g[::-1, :]
    if vertical:
        g = np.rot90(g, -1)[:, ::-1]  # transpose: wall band becomes the left columns
    return np.ascontiguousarray(g)


def cast_rays(walls: np.ndarray, origin: tuple[int, int], n_rays: int, max_range: float,
              step: float = 0.5):
    """Hit pixels (one per ray that hits, as flat indices) and the traversed mask."""
    h, w = walls.shape
    ox, oy = origin[0] + 0.5, origin[1] + 0.5
    ang = (np.arange(n_rays) + 0.5) * (2 * math.pi / n_rays)
    t = np.arange(0.0, max_range, step)
    xs = np.floor(ox + np.cos(ang)[:, None] * t[None, :]).astype(np.int64)
    ys = np.floor(oy + np.sin(ang)[:, None] * t[None, :]).astype(np.int64)
    inside = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    xc, yc = np.clip(xs, 0, w - 1), np.clip(ys, 0, h - 1)
    blocked = walls[yc, xc] | ~inside
    first = np.where(blocked.any(axis=1), blocked.argmax(axis=1), t.size)
    seen = np.arange(t.size)[None, :] <= np.minimum(first, t.size - 1)[:, None]
    seen &= inside
    rows = np.nonzero(first < t.size)[0]
    hit_x, hit_y = xc[rows, first[rows]], yc[rows, first[rows]]
    real = inside[rows, first[rows]]
    hits = hit_y[real] * w + hit_x[real]
    traversed = np.zeros(h * w, dtype=bool)
    traversed[(yc * w + xc)[seen]] = True
    return hits, traversed.reshape(h, w)


def _pick_sizes(rng: np.random.Generator, n: int, lo: int, hi: int, gap: int) -> list[int]:
    for _ in range(200):
        out: list[int] = []
        for v in rng.permutation(np.arange(lo, hi + 1)):
            if all(abs(int(v) - o) >= gap for o in out):
                out.append(int(v))
            if len(out) == n:
                return out
    raise GenerationFailed(f"cannot draw {n} sizes in [{lo}, {hi}] px at least {gap} px apart")


def clutter_blobs(rooms: np.ndarray, density: float, rng: np.random.Generator,
                  keep_clear: np.ndarray | None = None) -> np.ndarray:
    """Small furniture-like disks covering about ``density`` of the room interiors."""
    out = np.zeros(rooms.shape, dtype=bool)
    allowed = rooms if keep_clear is None else rooms & ~keep_clear
    ys, xs = np.nonzero(allowed)
    if ys.size == 0 or density <= 0:
        return out
    target = density * int(rooms.sum())
    h, w = rooms.shape
    covered = 0
    for _ in range(100 * ys.size):
        if covered >= target:
            break
        j = int(rng.integers(ys.size))
        r = float(rng.uniform(1.0, 3.0))
        y0, y1 = max(0, int(ys[j] - r)), min(h, int(ys[j] + r) + 1)
        x0, x1 = max(0, int(xs[j] - r)), min(w, int(xs[j] + r) + 1)
        gy, gx = np.mgrid[y0:y1, x0:x1]
        disk = ((gy - ys[j]) ** 2 + (gx - xs[j]) ** 2 <= r * r) & allowed[y0:y1, x0:x1]
        new = disk & ~out[y0:y1, x0:x1]
        out[y0:y1, x0:x1] |= new
        covered += max(1, int(new.sum()))
    return out


SCANNER_HEIGHT = 1.5
BAND = (0.1, 2.5)


def band_height(top: np.ndarray) -> np.ndarray:
    """Part of an obstacle of height ``top`` inside the counted height band.

    Scans are voxelized before projection, so a seen pixel column holds one
    point per occupied voxel regardless of range.
    """
    return np.maximum(0.0, np.minimum(top, BAND[1]) - BAND[0])


def _scan_from_view(heights, jambs, origin, spec: SceneSpec, rng, scan_id: str, max_range: float):
    """``heights``: obstacle top in meters per pixel, 0 where free."""
    h, w = heights.shape
    hits, traversed = cast_rays(heights > 0, origin, spec.n_rays, max_range)
    counts = np.zeros(h * w)
    counts[hits] = band_height(heights.ravel()[hits])
    counts = counts.reshape(h, w)
    p = normalize_counts(counts)
    free = traversed.copy()
    free = open3x3(free)
    ox, oy = origin
    free[oy, ox] = True
    if spec.dropout > 0:
        hit = p > 0
        p[hit & (rng.random(p.shape) < spec.dropout)] = 0.0
    doors = jambs & (p > 0)
    ys, xs = np.nonzero(free | (p > 0))
    b = 2
    x0, x1 = max(0, xs.min() - b), min(w, xs.max() + 1 + b)
    y0, y1 = max(0, ys.min() - b), min(h, ys.max() + 1 + b)
    crop = (slice(y0, y1), slice(x0, x1))
    return ScanEvidence(p[crop], free[crop], doors[crop], (ox - x0, oy - y0),
                        spec.meters_per_pixel, scan_id)


def gen_scene(spec: SceneSpec) -> Scene:
    rng = np.random.default_rng(spec.seed)
    mpp, t = spec.meters_per_pixel, spec.wall_thickness
    rows, cols = spec.layout
    n_rooms = spec.rooms
    dup = spec.duplicate_rooms
    if dup > cols:
        raise GenerationFailed("duplicate rooms must fit in one grid row")
    door_px = max(3, int(round(spec.door_width / mpp)))
    lo = int(math.ceil(spec.room_size_range[0] / mpp))
    hi = int(math.floor(spec.room_size_range[1] / mpp))
    if lo < 2 * door_px + 12:
        raise GenerationFailed("rooms too small for a door")
    n_dup_cols = dup if dup else 0
    sizes = _pick_sizes(rng, rows + cols - max(0, n_dup_cols - 1), lo, hi, 4)
    heights = sizes[:rows]
    widths = sizes[rows:]
    if dup:
        widths = [widths[0]] * dup + widths[1:]
    widths = widths[:cols]

    cells = [(r, c) for r in range(rows) for c in range(cols)][:n_rooms]
    # duplicates sit in the last row, leftmost columns
    last_row = rows - 1
    dup_cells = {(last_row, c) for c in range(dup)}
    if dup and any(cell not in cells for cell in dup_cells):
        raise GenerationFailed("duplicate rooms fall outside the room list")
    if dup and rows < 2:
        raise GenerationFailed("duplicate rooms need a row above them")

    xs0 = [spec.margin + t + sum(widths[:c]) + c * t for c in range(cols)]
    ys0 = [spec.margin + t + sum(heights[:r]) + r * t for r in range(rows)]
    bw = xs0[-1] + widths[-1] + t + spec.margin
    bh = ys0[-1] + heights[-1] + t + spec.margin
    W, H = bw, bh
    off_x = off_y = 0
    if spec.canvas is not None:
        if spec.canvas < max(bw, bh):
            raise GenerationFailed("canvas smaller than the building")
        W = H = spec.canvas
        off_x, off_y = (W - bw) // 2, (H - bh) // 2
    xs0 = [x + off_x for x in xs0]
    ys0 = [y + off_y for y in ys0]

    img = np.ones((H, W))
    labels = np.zeros((H, W), dtype=np.int32)
    index = {cell: i for i, cell in enumerate(cells)}
    for (r, c), i in index.items():
        x0, y0, rw, rh = xs0[c], ys0[r], widths[c], heights[r]
        img[y0 - t:y0 + rh + t, x0 - t:x0 + rw + t] = 0.0
    for (r, c), i in index.items():
        x0, y0, rw, rh = xs0[c], ys0[r], widths[c], heights[r]
        img[y0:y0 + rh, x0:x0 + rw] = 1.0
        labels[y0:y0 + rh, x0:x0 + rw] = i + 1

    # adjacency: spanning tree plus extras; duplicates attach only upward
    adj = []
    for (r, c) in cells:
        if (r, c + 1) in index:
            adj.append(((r, c), (r, c + 1)))
        if (r + 1, c) in index:
            adj.append(((r, c), (r + 1, c)))
    forced = [((last_row - 1, c), (last_row, c)) for c in range(dup)]
    allowed = [e for e in adj if not (e[0] in dup_cells or e[1] in dup_cells)]
    order = [allowed[i] for i in rng.permutation(len(allowed))]
    parent = {cell: cell for cell in cells}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    chosen = []
    for e in forced:
        parent[find(e[0])] = find(e[1])
        chosen.append(e)
    for e in order:
        ra, rb = find(e[0]), find(e[1])
        if ra != rb:
            parent[ra] = rb
            chosen.append(e)
        elif rng.random() < spec.extra_doors:
            chosen.append(e)
    if len({find(c) for c in cells}) != 1:
        raise GenerationFailed("rooms cannot be connected")

    glyph = door_glyph(door_px, t)
    gh, gw = glyph.shape
    boxes: list[tuple[int, int, int, int]] = []
    jambs = np.zeros((H, W), dtype=bool)
    dup_offset = int(rng.integers(2, widths[0] - door_px - 2 - 1)) if dup else 0
    dup_flip = bool(rng.random() < 0.5)

    def overlaps(box):
        x, y, w_, h_ = box
        return any(x < bx + bw_ + 1 and bx < x + w_ + 1 and y < by + bh_ + 1 and by < y + h_ + 1
                   for bx, by, bw_, bh_ in boxes)

    for a, b in chosen:
        vertical = a[0] == b[0]  # side-by-side rooms share a vertical wall
        is_dup = b in dup_cells
        for attempt in range(60):
            if is_dup:
                flip_open, flip_hinge = False, dup_flip
                off = dup_offset
            else:
                flip_open = bool(rng.random() < 0.5)
                flip_hinge = bool(rng.random() < 0.5)
                span = heights[a[0]] if vertical else widths[a[1]]
                off = int(rng.integers(2, span - door_px - 2 - 1))
            if vertical:
                wx = xs0[a[1]] + widths[a[1]]  # wall band starts here
                gy = ys0[a[0]] + off
                x = wx - (gh - t) if flip_open else wx
                box = (x, gy - 2, gh, gw)
            else:
                wy = ys0[a[0]] + heights[a[0]]
                gx = xs0[a[1]] + off
                y = wy - (gh - t) if flip_open else wy
                box = (gx - 2, y, gw, gh)
            if not overlaps(box):
                break
            if is_dup:
                raise GenerationFailed("duplicate-room door collides with another door")
        else:
            continue
        g = _orient(glyph, vertical, flip_open, flip_hinge)
        x, y, w_, h_ = box
        img[y:y + h_, x:x + w_] = g
        boxes.append(box)
        if vertical:
            jambs[gy - 2:gy, wx:wx + t] = True
            jambs[gy + door_px:gy + door_px + 2, wx:wx + t] = True
        else:
            jambs[wy:wy + t, gx - 2:gx] = True
            jambs[wy:wy + t, gx + door_px:gx + door_px + 2] = True

    # architectural occupancy: walls without glyph strokes
    walls = np.zeros((H, W), dtype=bool)
    for (r, c) in cells:
        x0, y0, rw, rh = xs0[c], ys0[r], widths[c], heights[r]
        walls[y0 - t:y0 + rh + t, x0 - t:x0 + rw + t] = True
    walls &= labels == 0
    for x, y, w_, h_ in boxes:
        region = (slice(y, y + h_), slice(x, x + w_))
        walls[region] &= ~((img[region] > 0.5) & (labels[region] == 0))
    walls[labels > 0] = False
    # door-gap pixels are open
    img_walls = walls.copy()

    if spec.symbol_strokes:
        door_zone = np.zeros((H, W), dtype=bool)
        for x, y, w_, h_ in boxes:
            door_zone[max(0, y - 3):y + h_ + 3, max(0, x - 3):x + w_ + 3] = True
        for (r, c), i in index.items():
            if (r, c) in dup_cells:
                continue
            rw, rh = widths[c], heights[r]
            if rw * rh * mpp * mpp < 25.0:
                continue
            sw = int(rng.integers(max(6, rw // 6), max(7, rw // 3)))
            sh = int(rng.integers(max(6, rh // 6), max(7, rh // 3)))
            for _ in range(20):
                x = xs0[c] + int(rng.integers(6, rw - sw - 6))
                y = ys0[r] + int(rng.integers(6, rh - sh - 6))
                if not door_zone[y - 2:y + sh + 2, x - 2:x + sw + 2].any():
                    img[y, x:x + sw] = 0.0
                    img[y + sh - 1, x:x + sw] = 0.0
                    img[y:y + sh, x] = 0.0
                    img[y:y + sh, x + sw - 1] = 0.0
                    img[y + sh // 2, x:x + sw] = 0.0
                    break

    for _ in range(spec.specks):
        (r, c) = cells[int(rng.integers(len(cells)))]
        x = xs0[c] + int(rng.integers(4, widths[c] - 5))
        y = ys0[r] + int(rng.integers(4, heights[r] - 5))
        s = int(rng.integers(1, 3))
        img[y:y + s, x:x + s] = 0.0

    # scanners
    scans, gt_pl, gt_rooms = [], {}, {}
    diag = math.hypot(max(widths), max(heights))
    max_range = 1.6 * diag
    clear = max(3, int(round(0.5 / mpp)))
    origins = []
    for (r, c), i in index.items():
        rw, rh = widths[c], heights[r]
        origins.append((xs0[c] + int(rng.integers(clear, rw - clear)),
                        ys0[r] + int(rng.integers(clear, rh - clear))))
    # furniture: occluding, shared by every scan, absent from the floorplan
    keep_clear = np.zeros((H, W), dtype=bool)
    yy, xx = np.mgrid[0:H, 0:W]
    for sx, sy in origins:
        keep_clear |= (xx - sx) ** 2 + (yy - sy) ** 2 <= (clear + 3) ** 2
    for x, y, w_, h_ in boxes:
        keep_clear[max(0, y - 4):y + h_ + 4, max(0, x - 4):x + w_ + 4] = True
    interior = ndimage.binary_erosion(labels > 0, iterations=2)
    clutter = clutter_blobs(interior, spec.clutter_density, rng, keep_clear)
    blob_ids, n_blobs = ndimage.label(clutter)
    blob_tops = np.concatenate([[0.0], rng.uniform(0.4, 1.0, n_blobs)])
    occupancy = np.where(img_walls, BAND[1] + 0.5, blob_tops[blob_ids])
    for (r, c), i in index.items():
        sx, sy = origins[i]
        sid = f"scan_{i:02d}"
        ev = _scan_from_view(occupancy, jambs, (sx, sy), spec, rng, sid, max_range)
        ks = int(rng.integers(4))
        scans.append(ev.rotated(ks))
        gt_pl[sid] = Placement((4 - ks) % 4, sx, sy)
        gt_rooms[sid] = i + 1

    ruler_len = 100
    rx, ry = off_x + 2, off_y + 2
    ruler = RulerSpec((float(rx), float(ry)), (float(rx + ruler_len), float(ry)), ruler_len * mpp)
    bx, by, bw_, bh_ = boxes[0] if boxes else (0, 0, 3, 3)
    door_spec = DoorTemplateSpec(bx, by, bw_, bh_, 0.8) if boxes else None
    config = FloorplanConfig(ruler=ruler, door_template=door_spec)
    return Scene(img, config, scans, GroundTruth(gt_pl, gt_rooms), labels, img_walls, boxes,
                 clutter=clutter)


def twin_door_fixture(seed: int = 0, mpp: float = 0.1) -> Scene:
    """Two identical, isolated rooms with openings in the same spots; only room 1's
    top opening and room 2's bottom opening are marked as doors. The scan is taken
    in room 1.
    """
    rng = np.random.default_rng(seed)
    t, rw, rh, door_px = 3, 44, 36, 9
    gap = 80  # isolation distance, longer than any ray reaching out of a room
    m = 90
    H = 2 * m + rh + 2 * t
    W = 2 * m + 2 * (rw + 2 * t) + gap
    img = np.ones((H, W))
    labels = np.zeros((H, W), dtype=np.int32)
    jambs = np.zeros((H, W), dtype=bool)
    door_marks = np.zeros((H, W), dtype=bool)
    top_off, bot_off = 8, 26
    rooms = []
    for i in range(2):
        x0 = m + t + i * (rw + 2 * t + gap)
        y0 = m + t
        img[y0 - t:y0 + rh + t, x0 - t:x0 + rw + t] = 0.0
        img[y0:y0 + rh, x0:x0 + rw] = 1.0
        labels[y0:y0 + rh, x0:x0 + rw] = i + 1
        for wy, off in ((y0 - t, top_off), (y0 + rh, bot_off)):
            gx = x0 + off
            img[wy:wy + t, gx:gx + door_px] = 1.0
        rooms.append((x0, y0))
    walls = img < 0.5
    # room 1 marks its top opening, room 2 its bottom opening
    for i, (x0, y0) in enumerate(rooms):
        wy, off = (y0 - t, top_off) if i == 0 else (y0 + rh, bot_off)
        gx = x0 + off
        door_marks[wy:wy + t, gx - 2:gx + door_px + 2] = True
        if i == 0:
            jambs[wy:wy + t, gx - 2:gx] = True
            jambs[wy:wy + t, gx + door_px:gx + door_px + 2] = True
    x0, y0 = rooms[0]
    sx = x0 + int(rng.integers(8, rw - 8))
    sy = y0 + int(rng.integers(8, rh - 8))
    spec = SceneSpec(seed=seed, rooms=2, clutter_density=0.0, dropout=0.0, meters_per_pixel=mpp,
                     symbol_strokes=False, specks=0)
    ev = _scan_from_view(np.where(walls, BAND[1] + 0.5, 0.0), jambs, (sx, sy), spec, rng,
                         "scan_00", 60.0)
    ruler = RulerSpec((2.0, 2.0), (102.0, 2.0), 100 * mpp)
    return Scene(img, FloorplanConfig(ruler=ruler), [ev],
                 GroundTruth({"scan_00": Placement(0, sx, sy)}, {"scan_00": 1}),
                 labels, walls, [], door_marks)


# --- evaluation ----------------------------------------------------------------------

def _as_mapping(result) -> dict[str, Placement]:
    if isinstance(result, dict):
        return dict(result)
    return {sid: pl for sid, pl in result}


def placement_correct(pl: Placement, truth: Placement, tol: int = 3) -> bool:
    return (pl.k % 4 == truth.k % 4 and abs(pl.tx - truth.tx) <= tol
            and abs(pl.ty - truth.ty) <= tol)


def eval_placements(result, gt: GroundTruth) -> float:
    """Fraction of scans placed with the wrong rotation or more than the tolerance away."""
    got = _as_mapping(result)
    if set(got) != set(gt.placements):
        raise ValueError("result and ground truth cover different scan ids")
    if not got:
        raise ValueError("no scans to evaluate")
    bad = sum(not placement_correct(got[s], gt.placements[s], gt.tolerance_px) for s in got)
    return bad / len(got)


def room_at(labels: np.ndarray, x: int, y: int, tolerance: int = 5) -> int:
    """Room label under (x, y), or of the nearest room pixel within ``tolerance``."""
    h, w = labels.shape
    if 0 <= x < w and 0 <= y < h and labels[y, x]:
        return int(labels[y, x])
    y0, y1 = max(0, y - tolerance), min(h, y + tolerance + 1)
    x0, x1 = max(0, x - tolerance), min(w, x + tolerance + 1)
    if y0 >= y1 or x0 >= x1:
        return 0
    win = labels[y0:y1, x0:x1]
    ys, xs = np.nonzero(win)
    if ys.size == 0:
        return 0
    d = np.hypot(ys + y0 - y, xs + x0 - x)
    j = int(np.argmin(d))
    return int(win[ys[j], xs[j]]) if d[j] <= tolerance else 0


def stacking_count(placements: list[Placement], labels: np.ndarray, radius: float = 5.0,
                   tolerance: int = 5) -> int:
    """Pairs of scans whose placed scanner positions lie within ``radius`` px in one room."""
    rooms = [room_at(labels, p.tx, p.ty, tolerance) for p in placements]
    n = 0
    for i in range(len(rooms)):
        for j in range(i + 1, len(rooms)):
            close = math.hypot(placements[i].tx - placements[j].tx,
                               placements[i].ty - placements[j].ty) <= radius
            n += bool(close and rooms[i] != 0 and rooms[i] == rooms[j])
    return n


# --- scene directories -----------------------------------------------------------

def save_scene(scene: Scene, out_dir: str | Path, spec: SceneSpec | None = None) -> None:
    out = Path(out_dir)
    (out / "scans").mkdir(parents=True, exist_ok=True)
    raster.save_gray(out / "floorplan.png", scene.floorplan)
    (out / "config.json").write_text(json.dumps({"floorplan": scene.config.to_dict()}, indent=2))
    for ev in scene.scans:
        save_evidence(ev, out / "scans", ev.scan_id)
    (out / "gt.json").write_text(json.dumps(scene.gt.to_dict(), indent=2))
    from PIL import Image
    Image.fromarray(scene.room_labels.astype(np.uint16)).save(out / "rooms.png")
    if spec is not None:
        (out / "scene.json").write_text(json.dumps(spec.to_dict(), indent=2))


def load_gt(path: str | Path) -> GroundTruth:
    return GroundTruth.from_dict(json.loads(Path(path).read_text()))


def load_room_labels(path: str | Path) -> np.ndarray:
    from PIL import Image
    with Image.open(path) as im:
        return np.asarray(im).astype(np.int32)


def load_scene_scans(scene_dir: str | Path) -> list[ScanEvidence]:
    from .scanprep import list_evidence_stems
    d = Path(scene_dir) / "scans"
    return [load_evidence(d, s) for s in list_evidence_stems(d)]
