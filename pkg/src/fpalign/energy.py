"""Potentials of the scan-placement MRF.

Three families live here:

* scan-to-floorplan unaries (semantic door cue + geometric residual) and the
  three baseline image metrics they are compared against,
* the scan-to-scan pairwise potential,
* the floorplan coverage potential, expanded into pairwise tables over the
  candidate labels of every scan pair.

Every unary exists twice: a literal per-placement function that maps each
evidence pixel through the placement (the reference), and
:class:`UnaryEvaluator`, the batched gather used by the candidate search.
Tests hold the two equal.
"""

from __future__ import annotations

import functools
import threading
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import raster
from .floorplan import FloorplanContext
from .scanprep import ScanEvidence


BASELINES = ("naive_ssd", "masked_ssd", "distance_transform")
UNARY_KINDS = ("ours",) + BASELINES

SEMANTIC_WHITE = 0.4
PRUNE_OUTSIDE = 0.3
WALL_EVIDENCE = 0.25
OVERLAP_AREA_M2 = 4.0


@dataclass(frozen=True, order=True)
class Placement:
    """Quarter-turn ``k`` plus the floorplan pixel ``(tx, ty)`` the scanner lands on."""
    k: int
    tx: int
    ty: int

    def __post_init__(self):
        for name in ("k", "tx", "ty"):
            object.__setattr__(self, name, int(getattr(self, name)))

    def to_dict(self) -> dict:
        return {"k": self.k, "tx": self.tx, "ty": self.ty}


@dataclass(frozen=True)
class PotentialWeights:
    w_semantic: float = 1.0
    w_geometric: float = 1.0
    w_ss: float = 0.2
    w_cov: float = 1.0
    cov_per_scan: bool = True  # coverage weight multiplied by the scan count when assembled

    def __post_init__(self):
        if min(self.w_semantic, self.w_geometric, self.w_ss, self.w_cov) < 0:
            raise ValueError("potential weights must be nonnegative")


def map_pixels(scan: ScanEvidence, pl: Placement, xs, ys):
    """Floorplan coordinates of evidence pixels ``(xs, ys)`` under a placement."""
    ox, oy = scan.origin_px
    rx, ry = raster.rotate_vector(np.asarray(xs) - ox, np.asarray(ys) - oy, pl.k)
    return pl.tx + rx, pl.ty + ry


def _lookup(img: np.ndarray, fx, fy, outside: float) -> np.ndarray:
    h, w = img.shape
    inside = (fx >= 0) & (fx < w) & (fy >= 0) & (fy < h)
    out = np.full(np.shape(fx), outside, dtype=np.float64)
    out[inside] = img[fy[inside], fx[inside]]
    return out


def semantic_cost_map(clean: np.ndarray, doors: np.ndarray) -> np.ndarray:
    return np.where(doors, 0.0, np.where(clean > SEMANTIC_WHITE, 0.5, 1.0))


# --- reference (per-placement) unaries ------------------------------------------

def semantic_penalty(scan: ScanEvidence, pl: Placement, ctx: FloorplanContext) -> float:
    ys, xs = np.nonzero(scan.doors)
    if ys.size == 0:
        return 0.0
    fx, fy = map_pixels(scan, pl, xs, ys)
    cost = _lookup(semantic_cost_map(ctx.clean, ctx.doors), fx, fy, outside=1.0)
    return float(cost.mean())


def geometric_penalty(scan: ScanEvidence, pl: Placement, ctx: FloorplanContext) -> float:
    """Mean of the two one-sided unexplained-intensity ratios."""
    p = scan.point_ev
    ys, xs = np.nonzero(p > 0)
    if ys.size == 0:
        raise ValueError("scan has no point evidence")
    vals = p[ys, xs]
    fx, fy = map_pixels(scan, pl, xs, ys)
    df = _lookup(ctx.dilated, fx, fy, outside=0.0)
    d1 = np.maximum(0.0, vals - df).sum() / vals.sum()

    dp = raster.dilate_gray(p, 5)
    ys, xs = np.nonzero(scan.free_space)
    fx, fy = map_pixels(scan, pl, xs, ys)
    ink = _lookup(1.0 - ctx.clean, fx, fy, outside=0.0)
    den = ink.sum()
    d2 = np.maximum(0.0, ink - dp[ys, xs]).sum() / den if den > 0 else 0.0
    return float(0.5 * (d1 + d2))


def unary(scan: ScanEvidence, pl: Placement, ctx: FloorplanContext,
          w: PotentialWeights = PotentialWeights()) -> float:
    total = 0.0
    if w.w_semantic:
        total += w.w_semantic * semantic_penalty(scan, pl, ctx)
    if w.w_geometric:
        total += w.w_geometric * geometric_penalty(scan, pl, ctx)
    return total


def baseline_unary(kind: str, scan: ScanEvidence, pl: Placement, ctx: FloorplanContext) -> float:
    p = scan.point_ev
    if kind == "naive_ssd":
        ys, xs = np.indices(p.shape).reshape(2, -1)
    elif kind in ("masked_ssd", "distance_transform"):
        ys, xs = np.nonzero(scan.free_space)
    else:
        raise ValueError(f"unknown baseline {kind!r}")
    fx, fy = map_pixels(scan, pl, xs, ys)
    vals = p[ys, xs]
    if kind == "distance_transform":
        # extend the field past the raster edge so off-map pixels keep true distances
        h, w = ctx.shape
        pad = max(p.shape)
        ink = np.pad(ctx.clean < SEMANTIC_WHITE, pad, constant_values=False)
        dt = raster.distance_transform(ink)
        return float((dt[fy + pad, fx + pad] * vals).sum() / len(vals))
    ink = _lookup(1.0 - ctx.clean, fx, fy, outside=0.0)
    return float(((ink - vals) ** 2).sum() / len(vals))


def unary_of_kind(kind: str, scan, pl, ctx, w: PotentialWeights = PotentialWeights()) -> float:
    if kind == "ours":
        return unary(scan, pl, ctx, w)
    return baseline_unary(kind, scan, pl, ctx)


def outside_fraction(scan: ScanEvidence, pl: Placement, ctx: FloorplanContext) -> float:
    """Fraction of the placed free space falling outside the building mask."""
    ys, xs = np.nonzero(scan.free_space)
    fx, fy = map_pixels(scan, pl, xs, ys)
    inside = _lookup(ctx.building.astype(np.float64), fx, fy, outside=0.0)
    return float(1.0 - inside.mean())


# --- batched evaluation ------------------------------------------------------------

class FloorLayers:
    """One pyramid level of floorplan rasters, with padded copies for gathering."""

    def __init__(self, clean: np.ndarray, doors: np.ndarray, building: np.ndarray,
                 meters_per_pixel: float, dilated: np.ndarray | None = None, kernel: int = 5):
        self.clean = np.asarray(clean, dtype=np.float64)
        self.doors = np.asarray(doors, dtype=bool)
        self.building = np.asarray(building, dtype=bool)
        self.kernel = kernel
        self.dilated = raster.dilate_gray(1.0 - self.clean, kernel) if dilated is None else dilated
        self.meters_per_pixel = meters_per_pixel
        self._padded: dict[int, dict[str, np.ndarray]] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_context(cls, ctx: FloorplanContext) -> "FloorLayers":
        return cls(ctx.clean, ctx.doors, ctx.building, ctx.meters_per_pixel, ctx.dilated)

    @property
    def shape(self) -> tuple[int, int]:
        return self.clean.shape

    def padded(self, pad: int) -> dict[str, np.ndarray]:
        with self._lock:
            if pad in self._padded:
                return self._padded[pad]
            out = {
                "cost": np.pad(semantic_cost_map(self.clean, self.doors), pad, constant_values=1.0),
                "dilated": np.pad(self.dilated, pad, constant_values=0.0),
                "ink": np.pad(1.0 - self.clean, pad, constant_values=0.0),
                "outside": np.pad((~self.building).astype(np.float64), pad, constant_values=1.0),
            }
            ink = np.pad(self.clean < SEMANTIC_WHITE, pad, constant_values=False)
            out["dt"] = raster.distance_transform(ink) if ink.any() else np.zeros(ink.shape)
            out = {k: np.ascontiguousarray(v).ravel() for k, v in out.items()}
            out["width"] = self.shape[1] + 2 * pad
            self._padded[pad] = out
            return out


class UnaryEvaluator:
    """Scores one rotated scan at many translations over one floorplan level.

    ``scan`` must already be rotated; translations are the floorplan pixels
    the scanner origin lands on.
    """

    def __init__(self, scan: ScanEvidence, floor: FloorLayers, kind: str = "ours",
                 weights: PotentialWeights = PotentialWeights(), chunk: int = 1 << 22):
        if kind not in UNARY_KINDS:
            raise ValueError(f"unknown unary kind {kind!r}")
        self.kind, self.weights, self.chunk = kind, weights, chunk
        self.floor = floor
        h, w = scan.shape
        self.pad = max(h, w) + 1
        self.layers = floor.padded(self.pad)
        wp = self.layers["width"]
        ox, oy = scan.origin_px

        def offsets(mask):
            ys, xs = np.nonzero(mask)
            return (ys - oy) * wp + (xs - ox), ys, xs

        p = scan.point_ev
        self.fs_idx, fy, fx = offsets(scan.free_space)
        self.fs_p = p[fy, fx]
        if kind == "ours":
            self.door_idx, _, _ = offsets(scan.doors)
            self.p_idx, py, px = offsets(p > 0)
            self.p_val = p[py, px]
            if self.p_val.size == 0:
                raise ValueError("scan has no point evidence")
            self.fs_dp = raster.dilate_gray(p, floor.kernel)[fy, fx]
        elif kind == "naive_ssd":
            self.win_idx, wy, wx = offsets(np.ones(p.shape, dtype=bool))
            self.win_p = p[wy, wx]

    def _base(self, tx, ty) -> np.ndarray:
        wp = self.layers["width"]
        return (np.asarray(ty, dtype=np.int64) + self.pad) * wp + np.asarray(tx, dtype=np.int64) + self.pad

    def _gather(self, name: str, base: np.ndarray, idx: np.ndarray, fn) -> np.ndarray:
        """Apply ``fn`` row-wise to the gathered (n_translations, n_pixels) block, chunked."""
        arr = self.layers[name]
        out = np.empty(len(base))
        step = max(1, self.chunk // max(1, len(idx)))
        for s in range(0, len(base), step):
            block = arr[base[s:s + step, None] + idx[None, :]]
            out[s:s + step] = fn(block)
        return out

    def kept(self, tx, ty) -> np.ndarray:
        """False where more than 30% of the placed free space leaves the building."""
        base = self._base(tx, ty)
        frac = self._gather("outside", base, self.fs_idx, lambda b: b.mean(axis=1))
        return frac <= PRUNE_OUTSIDE + 1e-12

    def semantic(self, base):
        if self.door_idx.size == 0:
            return np.zeros(len(base))
        return self._gather("cost", base, self.door_idx, lambda b: b.mean(axis=1))

    def geometric(self, base):
        p_val, fs_dp = self.p_val, self.fs_dp
        d1 = self._gather("dilated", base, self.p_idx,
                          lambda b: np.maximum(0.0, p_val - b).sum(axis=1)) / p_val.sum()
        num = self._gather("ink", base, self.fs_idx,
                           lambda b: np.maximum(0.0, b - fs_dp).sum(axis=1))
        den = self._gather("ink", base, self.fs_idx, lambda b: b.sum(axis=1))
        d2 = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
        return 0.5 * (d1 + d2)

    def scores(self, tx, ty) -> np.ndarray:
        base = self._base(tx, ty)
        if self.kind == "ours":
            w = self.weights
            total = np.zeros(len(base))
            if w.w_semantic:
                total += w.w_semantic * self.semantic(base)
            if w.w_geometric:
                total += w.w_geometric * self.geometric(base)
            return total
        if self.kind == "naive_ssd":
            v = self.win_p
            return self._gather("ink", base, self.win_idx,
                                lambda b: ((b - v) ** 2).sum(axis=1)) / len(v)
        v = self.fs_p
        if self.kind == "masked_ssd":
            return self._gather("ink", base, self.fs_idx,
                                lambda b: ((b - v) ** 2).sum(axis=1)) / len(v)
        return self._gather("dt", base, self.fs_idx, lambda b: (b * v).sum(axis=1)) / len(v)


# --- scan-to-scan ---------------------------------------------------------------

@functools.lru_cache(maxsize=512)
def _pair_layers(scan: ScanEvidence, k: int):
    r = scan.rotated(k)
    heavy = np.where(r.point_ev > WALL_EVIDENCE, r.point_ev, 0.0)
    eroded = ndimage.binary_erosion(r.free_space, structure=np.ones((3, 3), dtype=bool),
                                    iterations=2, border_value=0)
    return r, heavy, eroded


def _window(scan_r: ScanEvidence, pl: Placement):
    ox, oy = scan_r.origin_px
    h, w = scan_r.shape
    x0, y0 = pl.tx - ox, pl.ty - oy
    return x0, y0, x0 + w, y0 + h


def scan_pair_potential(si: ScanEvidence, pi: Placement, sj: ScanEvidence, pj: Placement) -> float:
    """Overlap-gated agreement reward minus a free-space violation penalty, in [-1, 1].

    Violation: wall-strength evidence of one scan sitting well inside the
    other's free space. Agreement: NCC of the two point-evidence layers over
    the shared free space, counted only when positive.
    """
    ri, hi, ei = _pair_layers(si, pi.k % 4)
    rj, hj, ej = _pair_layers(sj, pj.k % 4)
    ax0, ay0, ax1, ay1 = _window(ri, pi)
    bx0, by0, bx1, by1 = _window(rj, pj)
    x0, y0, x1, y1 = max(ax0, bx0), max(ay0, by0), min(ax1, bx1), min(ay1, by1)
    if x0 >= x1 or y0 >= y1:
        return 0.0
    si_ = (slice(y0 - ay0, y1 - ay0), slice(x0 - ax0, x1 - ax0))
    sj_ = (slice(y0 - by0, y1 - by0), slice(x0 - bx0, x1 - bx0))
    overlap = ri.free_space[si_] & rj.free_space[sj_]
    n = int(overlap.sum())
    if n == 0:
        return 0.0
    a = ri.point_ev[si_][overlap]
    b = rj.point_ev[sj_][overlap]
    a0, b0 = a - a.mean(), b - b.mean()
    norm = np.sqrt((a0 * a0).sum() * (b0 * b0).sum())
    agree = float((a0 * b0).sum() / norm) if norm > 1e-12 else 0.0

    total = hi.sum() + hj.sum()
    if total > 0:
        bad = (hi[si_] * ej[sj_]).sum() + (hj[sj_] * ei[si_]).sum()
        violation = float(bad / total)
    else:
        violation = 0.0
    area0 = OVERLAP_AREA_M2 / si.meters_per_pixel ** 2
    return violation - max(agree, 0.0) * min(1.0, n / area0)


# --- floorplan coverage ------------------------------------------------------------

def placed_free_space(scan: ScanEvidence, pl: Placement, shape: tuple[int, int]) -> np.ndarray:
    """Flat indices of floorplan pixels covered by the placed free-space mask."""
    ys, xs = np.nonzero(scan.free_space)
    fx, fy = map_pixels(scan, pl, xs, ys)
    h, w = shape
    inside = (fx >= 0) & (fx < w) & (fy >= 0) & (fy < h)
    return fy[inside] * w + fx[inside]


@dataclass
class CoverageTerms:
    pair_tables: dict[tuple[int, int], np.ndarray]
    unary: list[np.ndarray]
    n_contested: int
    scale: float

    def energy(self, assignment) -> float:
        e = sum(float(u[a]) for u, a in zip(self.unary, assignment))
        for (i, j), t in self.pair_tables.items():
            e += float(t[assignment[i], assignment[j]])
        return e


def coverage_codes(candidates, scans, ctx: FloorplanContext) -> list[np.ndarray]:
    """Per scan, a per-pixel bit code of which candidate labels cover it (building only)."""
    h, w = ctx.shape
    inside = ctx.building.ravel()
    codes = []
    for cands, scan in zip(candidates, scans):
        if len(cands) > 8:
            raise ValueError("at most 8 candidate labels per scan")
        code = np.zeros(h * w, dtype=np.uint8)
        for a, pl in enumerate(cands):
            code[placed_free_space(scan, pl, (h, w))] |= np.uint8(1 << a)
        code[~inside] = 0
        codes.append(code)
    return codes


def _none_weight(n_reach: np.ndarray, split_none: bool) -> np.ndarray:
    n = n_reach.astype(np.float64)
    if not split_none:
        return np.ones_like(n)
    pairs = n * (n - 1) / 2
    return np.divide(1.0, pairs, out=np.zeros_like(n), where=pairs > 0)


def coverage_terms(candidates, scans, ctx: FloorplanContext, w_cov: float = 1.0,
                   include_unary: bool = True, split_none: bool = True) -> CoverageTerms:
    """Pairwise approximation of the coverage potential over candidate labels.

    For each building pixel, every pair of scans with a candidate covering it
    scores 0 (exactly one covers), 0.5 (both) or 1 (neither); a pixel only one
    scan can reach adds 0/1 to that scan's labels. All contributions are
    divided by the number of such pixels.

    With ``split_none`` the "neither" cost at a pixel reachable by n scans is
    divided by the n(n-1)/2 pairs there, so an uncovered pixel costs 1 in
    total; otherwise the per-pixel optimum drifts to about 2n/3 covering scans.
    """
    if any(len(c) == 0 for c in candidates):
        raise ValueError("every scan needs at least one candidate")
    n = len(candidates)
    sizes = [len(c) for c in candidates]
    codes = coverage_codes(candidates, scans, ctx)
    reach = [c > 0 for c in codes]
    n_reach = np.sum(reach, axis=0)
    n_contested = int((n_reach > 0).sum())
    scale = w_cov / n_contested if n_contested else 0.0

    none_w = _none_weight(n_reach, split_none)

    def bits(c: np.ndarray, size: int) -> np.ndarray:
        return ((c[:, None] >> np.arange(size)[None, :]) & 1).astype(np.float64)

    tables: dict[tuple[int, int], np.ndarray] = {}
    for i in range(n):
        for j in range(i + 1, n):
            both = reach[i] & reach[j]
            if not both.any():
                continue
            combo = codes[i][both].astype(np.int64) * 256 + codes[j][both]
            uniq, inv, counts = np.unique(combo, return_inverse=True, return_counts=True)
            none_counts = np.bincount(inv.ravel(), weights=none_w[both], minlength=uniq.size)
            bi, bj = bits(uniq // 256, sizes[i]), bits(uniq % 256, sizes[j])
            cover_both = np.einsum("u,ua,ub->ab", counts, bi, bj)
            cover_none = np.einsum("u,ua,ub->ab", none_counts, 1 - bi, 1 - bj)
            t = scale * (0.5 * cover_both + cover_none)
            if np.any(t != 0):
                tables[(i, j)] = t

    unaries = []
    for i in range(n):
        u = np.zeros(sizes[i])
        if include_unary:
            sole = reach[i] & (n_reach == 1)
            if sole.any():
                covered = bits(codes[i][sole], sizes[i]).sum(axis=0)
                u = scale * (sole.sum() - covered)
        unaries.append(u)
    return CoverageTerms(tables, unaries, n_contested, scale)


def coverage_energy_direct(assignment, candidates, scans, ctx: FloorplanContext,
                           w_cov: float = 1.0, include_unary: bool = True,
                           split_none: bool = True) -> float:
    """Pixel-by-pixel evaluation of the coverage rule, for checking :func:`coverage_terms`."""
    h, w = ctx.shape
    reachable = [set() for _ in scans]
    chosen = []
    for i, (cands, scan) in enumerate(zip(candidates, scans)):
        for pl in cands:
            reachable[i].update(placed_free_space(scan, pl, (h, w)).tolist())
        chosen.append(set(placed_free_space(scan, cands[assignment[i]], (h, w)).tolist()))
    total, contested = 0.0, 0
    for p in np.flatnonzero(ctx.building.ravel()).tolist():
        s_p = [i for i in range(len(scans)) if p in reachable[i]]
        if not s_p:
            continue
        contested += 1
        if len(s_p) == 1:
            if include_unary and p not in chosen[s_p[0]]:
                total += 1.0
            continue
        none = 1.0 / (len(s_p) * (len(s_p) - 1) / 2) if split_none else 1.0
        for a in range(len(s_p)):
            for b in range(a + 1, len(s_p)):
                ca, cb = p in chosen[s_p[a]], p in chosen[s_p[b]]
                total += 0.5 if (ca and cb) else (0.0 if (ca or cb) else none)
    return w_cov * total / contested if contested else 0.0
