"""Hand-built rasters with hand-computed potential values."""

import numpy as np

from fpalign import raster
from fpalign.energy import Placement
from fpalign.floorplan import FloorplanContext, mask_bbox
from fpalign.scanprep import ScanEvidence


def ctx_of(clean, doors=None, building=None, mpp=0.1):
    clean = np.asarray(clean, dtype=np.float64)
    doors = np.zeros(clean.shape, bool) if doors is None else np.asarray(doors, bool)
    building = np.ones(clean.shape, bool) if building is None else np.asarray(building, bool)
    return FloorplanContext(clean, raster.dilate_gray(1.0 - clean, 5), building, doors & building,
                            mpp, mask_bbox(building))


def scan_of(p, free=None, doors=None, origin=(0, 0), mpp=0.1, scan_id="s"):
    p = np.asarray(p, dtype=np.float64)
    free = np.ones(p.shape, bool) if free is None else np.asarray(free, bool)
    doors = np.zeros(p.shape, bool) if doors is None else np.asarray(doors, bool)
    return ScanEvidence(p, free, doors, origin, mpp, scan_id)


def geometric_fixture():
    """12x12 floorplan with one ink pixel; 5x5 scan with three evidence pixels.

    Under Placement(0, 7, 5): evidence 0.6, 0.8 land inside DF, 0.5 lands beyond
    it, so d1 = 0.5 / 1.9; the single ink pixel in the footprint sees dilated
    evidence 0.8, so d2 = 0.2. Geometric penalty = (5/19 + 1/5) / 2 = 22/95.
    The door pixel (evidence 0.5) lands on a floorplan door, semantic = 0.
    """
    clean = np.ones((12, 12))
    clean[5, 6] = 0.0
    doors = np.zeros((12, 12), bool)
    doors[5, 9] = True
    p = np.zeros((5, 5))
    p[0, 2], p[2, 4], p[4, 0] = 0.6, 0.5, 0.8
    free = np.zeros((5, 5), bool)
    free[1:4, 1:4] = True
    sdoors = np.zeros((5, 5), bool)
    sdoors[2, 4] = True
    return ctx_of(clean, doors), scan_of(p, free, sdoors, (2, 2)), Placement(0, 7, 5), 22 / 95


def semantic_fixtures():
    """(ctx, scan, placement, expected semantic penalty) cases."""
    out = []
    p = np.zeros((3, 5))
    p[1, 0] = p[1, 4] = 1.0
    sd = p > 0
    scan = scan_of(p, None, sd, (2, 1))

    clean = np.full((10, 10), 0.9)
    doors = np.zeros((10, 10), bool)
    doors[4, 3] = doors[4, 7] = True
    out.append((ctx_of(clean, doors), scan, Placement(0, 5, 4), 0.0))
    out.append((ctx_of(clean), scan, Placement(0, 5, 4), 0.5))

    clean2 = np.full((10, 10), 0.9)
    clean2[4, 7] = 0.1
    doors2 = np.zeros((10, 10), bool)
    doors2[4, 3] = True
    out.append((ctx_of(clean2, doors2), scan, Placement(0, 5, 4), 0.5))
    # quarter-turned: door offsets (-2, 0), (2, 0) become (0, 2), (0, -2), landing on
    # white (3, 8) and the door (3, 4)
    out.append((ctx_of(clean2, doors2), scan, Placement(1, 3, 6), 0.5 * (0.5 + 0.0)))
    # one door pixel falls off the raster (scores 1), the other on a door
    out.append((ctx_of(clean, doors), scan, Placement(0, 9, 4), 0.5 * (0.0 + 1.0)))
    return out


def coverage_pixel_fixture():
    """Two one-pixel scans, one building pixel; label 0 covers it, label 1 lies off-building."""
    building = np.zeros((6, 6), bool)
    building[2, 2] = True
    clean = np.ones((6, 6))
    clean[0, 0] = 0.0
    ctx = ctx_of(clean, building=building)
    one = np.ones((1, 1))
    scans = [scan_of(one, scan_id="a"), scan_of(one, scan_id="b")]
    cands = [[Placement(0, 2, 2), Placement(0, 4, 4)], [Placement(0, 2, 2), Placement(0, 5, 0)]]
    return ctx, scans, cands


def coverage_strip_fixture():
    """1x3 building strip; scan A covers pixels {0,1}, scan B covers {1,2}."""
    ctx = ctx_of(np.array([[0.0, 0.0, 0.0]]))
    two = np.ones((1, 2))
    a = scan_of(two, origin=(0, 0), scan_id="a")
    b = scan_of(two, origin=(1, 0), scan_id="b")
    return ctx, [a, b], [[Placement(0, 0, 0)], [Placement(0, 2, 0)]]


def coverage_neither_fixture():
    """One pixel reachable by three scans; label 0 covers it, label 1 lies off-building."""
    building = np.zeros((4, 4), bool)
    building[1, 1] = True
    ctx = ctx_of(np.zeros((4, 4)), building=building)
    one = np.ones((1, 1))
    scans = [scan_of(one, scan_id=s) for s in "abc"]
    cands = [[Placement(0, 1, 1), Placement(0, 3, 3)] for _ in scans]
    return ctx, scans, cands
