"""Floorplan preprocessing: clutter removal, scale, building mask, door mask."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import raster


@dataclass(frozen=True)
class RulerSpec:
    point_a: tuple[float, float]
    point_b: tuple[float, float]
    length: float

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError("ruler length must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "RulerSpec":
        return cls((d["ax"], d["ay"]), (d["bx"], d["by"]), d["meters"])

    def to_dict(self) -> dict:
        return {"ax": self.point_a[0], "ay": self.point_a[1],
                "bx": self.point_b[0], "by": self.point_b[1], "meters": self.length}


@dataclass(frozen=True)
class DoorTemplateSpec:
    """Pixel box ``(x, y, w, h)`` around one door symbol plus an NCC threshold."""
    x: int
    y: int
    w: int
    h: int
    threshold: float = 0.8

    def __post_init__(self):
        if self.w * self.h < 9:
            raise ValueError("door template box must cover at least 9 pixels")
        # thresholds above 1 are allowed and simply detect nothing
        if not self.threshold > -1.0:
            raise ValueError("door threshold must exceed -1")

    @classmethod
    def from_dict(cls, d: dict) -> "DoorTemplateSpec":
        return cls(int(d["x"]), int(d["y"]), int(d["w"]), int(d["h"]),
                   float(d.get("threshold", 0.8)))

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h,
                "threshold": self.threshold}


@dataclass(frozen=True)
class FloorplanConfig:
    ruler: RulerSpec
    door_template: DoorTemplateSpec | None = None
    ink_threshold: float = 0.4
    # None -> (0.5 m)^2
    clutter_min_area_m2: float | None = None
    floorplan_quarter_turns: int = 0
    dilation_kernel: int = 5

    @classmethod
    def from_dict(cls, d: dict) -> "FloorplanConfig":
        door = d.get("door_template")
        return cls(
            ruler=RulerSpec.from_dict(d["ruler"]),
            door_template=DoorTemplateSpec.from_dict(door) if door else None,
            ink_threshold=float(d.get("ink_threshold", 0.4)),
            clutter_min_area_m2=d.get("clutter_min_area_m2"),
            floorplan_quarter_turns=int(d.get("floorplan_quarter_turns", 0)),
        )

    def to_dict(self) -> dict:
        return {
            "ruler": self.ruler.to_dict(),
            "door_template": self.door_template.to_dict() if self.door_template else None,
            "ink_threshold": self.ink_threshold,
            "clutter_min_area_m2": self.clutter_min_area_m2,
            "floorplan_quarter_turns": self.floorplan_quarter_turns,
        }


@dataclass(frozen=True, eq=False)
class FloorplanContext:
    """Everything the matcher needs to know about one floorplan.

    ``dilated`` is the gray dilation of the ink image ``1 - clean`` so that
    walls are bright, the way point evidence is.
    """
    clean: np.ndarray
    dilated: np.ndarray
    building: np.ndarray
    doors: np.ndarray
    meters_per_pixel: float
    bbox: tuple[int, int, int, int] = field(default=(0, 0, 0, 0))  # x0, y0, x1, y1 inclusive

    def __post_init__(self):
        if self.meters_per_pixel <= 0:
            raise ValueError("meters_per_pixel must be positive")
        for name in ("clean", "dilated", "building", "doors"):
            a = getattr(self, name)
            a.setflags(write=False)
            if a.shape != self.clean.shape:
                raise ValueError(f"{name} shape {a.shape} differs from clean {self.clean.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.clean.shape

    @property
    def bbox_size(self) -> tuple[int, int]:
        x0, y0, x1, y1 = self.bbox
        return x1 - x0 + 1, y1 - y0 + 1

    def rotated(self, k: int) -> "FloorplanContext":
        k %= 4
        h, w = self.shape
        x0, y0, x1, y1 = self.bbox
        corners = [raster.rotate_point(x, y, (h, w), k) for x, y in ((x0, y0), (x1, y1))]
        xs, ys = zip(*corners)
        return FloorplanContext(
            clean=raster.rotate_quarter(self.clean, k),
            dilated=raster.rotate_quarter(self.dilated, k),
            building=raster.rotate_quarter(self.building, k),
            doors=raster.rotate_quarter(self.doors, k),
            meters_per_pixel=self.meters_per_pixel,
            bbox=(min(xs), min(ys), max(xs), max(ys)),
        )


def scale_from_ruler(spec: RulerSpec) -> float:
    d = math.dist(spec.point_a, spec.point_b)
    if d == 0:
        raise ValueError("ruler end points coincide")
    return spec.length / d


def build_building_mask(clean: np.ndarray, ink_threshold: float = 0.4) -> np.ndarray:
    """Pixels lying between the extreme ink pixels of both their row and their column."""
    ink = np.asarray(clean) < ink_threshold
    if not ink.any():
        raise ValueError("floorplan contains no ink pixels")
    h, w = ink.shape
    cols = np.arange(w)
    rows = np.arange(h)

    row_has = ink.any(axis=1)
    left = np.where(row_has, ink.argmax(axis=1), w)
    right = np.where(row_has, w - 1 - ink[:, ::-1].argmax(axis=1), -1)
    horiz = (cols[None, :] >= left[:, None]) & (cols[None, :] <= right[:, None])

    col_has = ink.any(axis=0)
    top = np.where(col_has, ink.argmax(axis=0), h)
    bottom = np.where(col_has, h - 1 - ink[::-1, :].argmax(axis=0), -1)
    vert = (rows[:, None] >= top[None, :]) & (rows[:, None] <= bottom[None, :])
    return horiz & vert


def mask_bbox(mask: np.ndarray) -> tuple[int, int, int, int]:
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise ValueError("empty mask has no bounding box")
    return int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())


def detect_doors_floorplan(clean: np.ndarray, spec: DoorTemplateSpec,
                           building: np.ndarray | None = None) -> np.ndarray:
    """Footprints of every rotated or mirrored copy of the boxed door symbol."""
    h, w = clean.shape
    if spec.x < 0 or spec.y < 0 or spec.x + spec.w > w or spec.y + spec.h > h:
        raise ValueError("door template box lies outside the floorplan")
    template = clean[spec.y:spec.y + spec.h, spec.x:spec.x + spec.w]
    if np.ptp(template) == 0:
        raise ValueError("door template crop is constant")
    out = np.zeros(clean.shape, dtype=bool)
    if spec.threshold > 1.0:
        return out
    for y, x, th, tw in raster.template_hits(clean, template, spec.threshold, mirror=True):
        out[y:y + th, x:x + tw] = True
    if building is not None:
        out &= building
    return out


def make_context(raw: np.ndarray, config: FloorplanConfig) -> FloorplanContext:
    raw = raster.check_gray(raw)
    mpp = scale_from_ruler(config.ruler)
    area_m2 = config.clutter_min_area_m2
    if area_m2 is None:
        area_m2 = 0.25
    min_area = area_m2 / (mpp * mpp)
    clean = raster.remove_small_components(raw, config.ink_threshold, min_area)
    building = build_building_mask(clean, config.ink_threshold)
    if config.door_template is not None:
        doors = detect_doors_floorplan(clean, config.door_template, building)
    else:
        doors = np.zeros(clean.shape, dtype=bool)
    dilated = raster.dilate_gray(1.0 - clean, config.dilation_kernel)
    ctx = FloorplanContext(clean, dilated, building, doors, mpp, mask_bbox(building))
    k = config.floorplan_quarter_turns % 4
    return ctx.rotated(k) if k else ctx


def save_context(ctx: FloorplanContext, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    raster.save_gray(out / "clean.png", ctx.clean, bits=16)
    raster.save_gray(out / "dilated.png", ctx.dilated, bits=16)
    raster.save_mask(out / "building.png", ctx.building)
    raster.save_mask(out / "doors.png", ctx.doors)
    meta = {"meters_per_pixel": ctx.meters_per_pixel, "bbox": list(ctx.bbox)}
    (out / "context.json").write_text(json.dumps(meta, indent=2))


def load_context(ctx_dir: str | Path) -> FloorplanContext:
    d = Path(ctx_dir)
    meta = json.loads((d / "context.json").read_text())
    return FloorplanContext(
        clean=raster.load_gray(d / "clean.png"),
        dilated=raster.load_gray(d / "dilated.png"),
        building=raster.load_mask(d / "building.png"),
        doors=raster.load_mask(d / "doors.png"),
        meters_per_pixel=float(meta["meters_per_pixel"]),
        bbox=tuple(meta["bbox"]),
    )
