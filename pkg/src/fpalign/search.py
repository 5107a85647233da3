"""Coarse-to-fine candidate search over scan placements.

Per scan and per quarter-turn, unaries are evaluated exhaustively on the
coarsest pyramid level, thresholded minima are kept, and each survivor is
refined on a sparse 7x7 child window one level down until full resolution.
The best distinct full-resolution minima over all rotations are the scan's
candidate labels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import raster
from .energy import FloorLayers, Placement, PotentialWeights, UnaryEvaluator, unary_of_kind
from .floorplan import FloorplanContext
from .scanprep import ScanEvidence


class NoCandidates(RuntimeError):
    """Every placement of a scan was pruned by the building mask."""


class InputTooSmall(ValueError):
    pass


@dataclass(frozen=True)
class SearchParams:
    levels: int = 5
    n_candidates: int = 5
    kind: str = "ours"
    weights: PotentialWeights = field(default_factory=PotentialWeights)
    nms_divisor: float = 80.0

    @classmethod
    def from_dict(cls, d: dict, weights: PotentialWeights | None = None) -> "SearchParams":
        return cls(levels=int(d.get("levels", 5)), n_candidates=int(d.get("n_candidates", 5)),
                   kind=d.get("kind", "ours"), weights=weights or PotentialWeights(),
                   nms_divisor=float(d.get("nms_divisor", 80.0)))


@dataclass
class CandidateSet:
    scan_id: str
    candidates: list[tuple[Placement, float]]
    evaluations: list[int] = field(default_factory=list)  # per level, finest first
    minima: list[int] = field(default_factory=list)

    @property
    def placements(self) -> list[Placement]:
        return [p for p, _ in self.candidates]

    def to_dict(self) -> dict:
        return {"scan_id": self.scan_id,
                "candidates": [{**p.to_dict(), "score": s} for p, s in self.candidates]}

    @classmethod
    def from_dict(cls, d: dict) -> "CandidateSet":
        return cls(d["scan_id"], [(Placement(int(c["k"]), int(c["tx"]), int(c["ty"])), float(c["score"]))
                                  for c in d["candidates"]])


# --- pyramids ---------------------------------------------------------------------

def _pool_floor(f: FloorLayers, kernel: int) -> FloorLayers:
    return FloorLayers(raster.pool2x2(f.clean, "min"), raster.pool2x2(f.doors, "max"),
                       raster.pool2x2(f.building, "max"), f.meters_per_pixel * 2, kernel=kernel)


def _pool_scan(s: ScanEvidence) -> ScanEvidence:
    ox, oy = s.origin_px
    p = raster.pool2x2(s.point_ev, "max")
    return ScanEvidence(p, raster.pool2x2(s.free_space, "max"),
                        raster.pool2x2(s.doors, "max") & (p > 0),
                        (ox // 2, oy // 2), s.meters_per_pixel * 2, s.scan_id)


def level_kernel(level: int, base: int = 5) -> int:
    """Dilation kernel at a pyramid level: the same metric radius, never below 1 px."""
    r = max(1, (base // 2) >> level)
    return 2 * r + 1


def floor_pyramid(ctx: FloorplanContext, levels: int = 5) -> list[FloorLayers]:
    h, w = ctx.shape
    if min(h, w) < 16:
        raise InputTooSmall(f"floorplan of {w}x{h} px is too small for a {levels}-level pyramid")
    out = [FloorLayers.from_context(ctx)]
    for level in range(1, levels):
        out.append(_pool_floor(out[-1], level_kernel(level)))
    return out


def scan_pyramid(scan: ScanEvidence, k: int, levels: int = 5) -> list[ScanEvidence]:
    out = [scan.rotated(k)]
    for _ in range(levels - 1):
        out.append(_pool_scan(out[-1]))
    return out


@dataclass
class PyramidStack:
    floor: list[FloorLayers]
    scan: list[list[ScanEvidence]]  # [rotation][level]


def build_pyramids(ctx: FloorplanContext, scan: ScanEvidence, levels: int = 5,
                   floor: list[FloorLayers] | None = None) -> PyramidStack:
    if scan.meters_per_pixel and abs(scan.meters_per_pixel / ctx.meters_per_pixel - 1) > 1e-6:
        raise ValueError("scan and floorplan pixel sizes differ; resample the scan first")
    floor = floor or floor_pyramid(ctx, levels)
    return PyramidStack(floor, [scan_pyramid(scan, k, levels) for k in range(4)])


# --- suppression -------------------------------------------------------------------

def nms_window(ctx_bbox_size: tuple[int, int], level: int, divisor: float = 80.0) -> int:
    wb, hb = ctx_bbox_size
    return max(1, int(round((wb + hb) / divisor / 2 ** level)))


def nonlocal_min_suppress(scores: np.ndarray, window: int,
                          threshold: float | None = None) -> list[tuple[int, int]]:
    """Positions ``(y, x)`` that are the minimum of their square neighbourhood and below threshold.

    ``window`` is the side of the neighbourhood; its radius is never below 1,
    so a survivor always beats its direct neighbours. Non-finite entries are
    unevaluated. The default threshold is mean minus standard deviation of the
    finite scores. Equal minima within one neighbourhood keep the first in
    (y, x) order.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    s = np.asarray(scores, dtype=np.float64)
    finite = np.isfinite(s)
    if not finite.any():
        return []
    if threshold is None:
        vals = s[finite]
        threshold = vals.mean() - vals.std()
    r = max(1, window // 2)
    filled = np.where(finite, s, np.inf)
    low = ndimage.minimum_filter(filled, size=2 * r + 1, mode="constant", cval=np.inf)
    ys, xs = np.nonzero(finite & (filled <= low) & (filled < threshold))
    kept: list[tuple[int, int]] = []
    for y, x in zip(ys.tolist(), xs.tolist()):
        v = filled[y, x]
        if any(abs(y - ky) <= r and abs(x - kx) <= r and filled[ky, kx] == v for ky, kx in kept):
            continue
        kept.append((y, x))
    return kept


def _child_offsets() -> np.ndarray:
    ring = [(x, -3) for x in range(-3, 4)] + [(3, y) for y in range(-2, 4)]
    ring += [(x, 3) for x in range(2, -4, -1)] + [(-3, y) for y in range(2, -3, -1)]
    inner = [(x, y) for y in range(-2, 3) for x in range(-2, 3)]
    return np.array(inner + ring[::2], dtype=np.int64)


CHILD_OFFSETS = _child_offsets()  # 25 interior + 12 perimeter, (dx, dy)


# --- search -------------------------------------------------------------------------

def _evaluate_level(scan_l: ScanEvidence, floor_l: FloorLayers, tx, ty, params: SearchParams):
    ev = UnaryEvaluator(scan_l, floor_l, params.kind, params.weights)
    field_ = np.full(floor_l.shape, np.inf)
    keep = ev.kept(tx, ty)
    tx, ty = tx[keep], ty[keep]
    if tx.size:
        field_[ty, tx] = ev.scores(tx, ty)
    return field_, int(tx.size)


def _suppress(field_: np.ndarray, window: int) -> list[tuple[int, int]]:
    minima = nonlocal_min_suppress(field_, window)
    if not minima and np.isfinite(field_).any():
        # threshold fell below the minimum (many tied best scores): keep every tied best
        best = float(field_[np.isfinite(field_)].min())
        minima = nonlocal_min_suppress(field_, window, np.nextafter(best, np.inf))
    return minima


def search_rotation(pyr: PyramidStack, k: int, bbox_size, params: SearchParams):
    """Full-resolution minima ``(score, y, x)`` for one rotation, plus per-level workload."""
    top = params.levels - 1
    floor, scans = pyr.floor, pyr.scan[k]
    h, w = floor[top].shape
    ty, tx = (a.ravel() for a in np.indices((h, w)))
    field_, n_eval = _evaluate_level(scans[top], floor[top], tx, ty, params)
    minima = _suppress(field_, nms_window(bbox_size, top, params.nms_divisor))
    evaluations, counts = [n_eval], [len(minima)]
    for level in range(top - 1, -1, -1):
        h, w = floor[level].shape
        m = np.array(minima, dtype=np.int64).reshape(-1, 2)
        cx = (2 * m[:, 1, None] + CHILD_OFFSETS[None, :, 0]).ravel()
        cy = (2 * m[:, 0, None] + CHILD_OFFSETS[None, :, 1]).ravel()
        ok = (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h)
        flat = np.unique(cy[ok] * w + cx[ok])
        field_, n_eval = _evaluate_level(scans[level], floor[level], flat % w, flat // w, params)
        minima = _suppress(field_, nms_window(bbox_size, level, params.nms_divisor))
        evaluations.append(n_eval)
        counts.append(len(minima))
    found = [(float(field_[y, x]), y, x) for y, x in minima]
    return found, evaluations[::-1], counts[::-1]


def _is_duplicate(a: Placement, b: Placement) -> bool:
    return a.k == b.k and abs(a.tx - b.tx) <= 1 and abs(a.ty - b.ty) <= 1


def candidate_search(ctx: FloorplanContext, scan: ScanEvidence,
                     params: SearchParams = SearchParams(),
                     floor: list[FloorLayers] | None = None) -> CandidateSet:
    pyr = build_pyramids(ctx, scan, params.levels, floor)
    pooled = []
    evaluations = np.zeros(params.levels, dtype=np.int64)
    minima = np.zeros(params.levels, dtype=np.int64)
    for k in range(4):
        found, ev, mn = search_rotation(pyr, k, ctx.bbox_size, params)
        evaluations += ev
        minima += mn
        pooled += [(s, k, y, x) for s, y, x in found]
    if not pooled:
        raise NoCandidates(f"{scan.scan_id}: every placement is pruned by the building mask")
    pooled.sort()
    chosen: list[Placement] = []
    for _, k, y, x in pooled:
        pl = Placement(k, x, y)
        if any(_is_duplicate(pl, c) for c in chosen):
            continue
        chosen.append(pl)
        if len(chosen) == params.n_candidates:
            break
    # final scores come from the reference evaluator, never from pyramid levels
    scored = sorted(((unary_of_kind(params.kind, scan, pl, ctx, params.weights), pl) for pl in chosen),
                    key=lambda t: (t[0], t[1]))
    return CandidateSet(scan.scan_id, [(pl, s) for s, pl in scored],
                        evaluations.tolist(), minima.tolist())


def exhaustive_placement_scores(ctx: FloorplanContext, scan: ScanEvidence, k: int,
                                kind: str = "ours",
                                weights: PotentialWeights = PotentialWeights(),
                                floor: FloorLayers | None = None) -> np.ndarray:
    """Full-resolution unary field for rotation ``k`` (inf where pruned)."""
    floor = floor or FloorLayers.from_context(ctx)
    h, w = ctx.shape
    ty, tx = (a.ravel() for a in np.indices((h, w)))
    params = SearchParams(kind=kind, weights=weights)
    field_, _ = _evaluate_level(scan.rotated(k), floor, tx, ty, params)
    return field_


def exhaustive_argmin(ctx: FloorplanContext, scan: ScanEvidence, kind: str = "ours",
                      weights: PotentialWeights = PotentialWeights()) -> tuple[Placement, float]:
    floor = FloorLayers.from_context(ctx)
    best = None
    for k in range(4):
        f = exhaustive_placement_scores(ctx, scan, k, kind, weights, floor)
        if not np.isfinite(f).any():
            continue
        y, x = np.unravel_index(np.argmin(f), f.shape)
        cand = (float(f[y, x]), k, int(y), int(x))
        if best is None or cand < best:
            best = cand
    if best is None:
        raise NoCandidates(f"{scan.scan_id}: every placement is pruned by the building mask")
    s, k, y, x = best
    return Placement(k, x, y), s


def save_candidates(path, sets: list[CandidateSet], rejected: list[str]) -> None:
    doc = {"candidate_sets": [c.to_dict() for c in sets], "rejected": rejected}
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)


def load_candidates(path) -> tuple[list[CandidateSet], list[str]]:
    with open(path) as f:
        doc = json.load(f)
    return [CandidateSet.from_dict(d) for d in doc["candidate_sets"]], list(doc.get("rejected", []))
