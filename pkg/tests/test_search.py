import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import fixtures as F
from fpalign import energy, floorplan, search, synth
from fpalign.energy import Placement
from fpalign.search import CandidateSet, SearchParams

SMALL = dict(rooms=4, grid=(2, 2), n_rays=1024, room_size_range=(3.0, 4.5), margin=8)


@pytest.fixture(scope="module")
def scene10():
    scene = synth.gen_scene(synth.SceneSpec(seed=2, rooms=10))
    ctx = floorplan.make_context(scene.floorplan, scene.config)
    floor = search.floor_pyramid(ctx)
    return scene, ctx, {s.scan_id: search.candidate_search(ctx, s, floor=floor) for s in scene.scans}


# pyramids

def test_pyramid_dims():
    ctx = F.ctx_of(np.ones((512, 512)) - np.eye(512))
    dims = [f.shape for f in search.floor_pyramid(ctx)]
    assert dims == [(512, 512), (256, 256), (128, 128), (64, 64), (32, 32)]


def test_pyramid_odd_dims_ceil():
    ctx = F.ctx_of(np.ones((37, 50)) - np.eye(37, 50))
    dims = [f.shape for f in search.floor_pyramid(ctx)]
    assert dims == [(37, 50), (19, 25), (10, 13), (5, 7), (3, 4)]


def test_pyramid_keeps_ink_and_evidence():
    clean = np.ones((64, 64))
    clean[37, 21] = 0.0
    ctx = F.ctx_of(clean)
    p = np.zeros((40, 40))
    p[13, 29] = 1.0
    pyr = search.build_pyramids(ctx, F.scan_of(p, origin=(0, 0)))
    assert pyr.floor[4].clean.min() == 0.0
    assert pyr.scan[0][4].point_ev.max() == 1.0
    assert len(pyr.scan) == 4 and len(pyr.scan[0]) == 5
    assert np.array_equal(pyr.floor[0].clean, ctx.clean)


def test_pyramid_too_small():
    with pytest.raises(search.InputTooSmall):
        search.floor_pyramid(F.ctx_of(np.zeros((12, 40))))


def test_pyramid_scale_mismatch():
    ctx = F.ctx_of(np.zeros((32, 32)), mpp=0.1)
    with pytest.raises(ValueError):
        search.build_pyramids(ctx, F.scan_of(np.ones((3, 3)), mpp=0.05))


def test_level_kernels():
    assert [search.level_kernel(level) for level in range(5)] == [5, 3, 3, 3, 3]


def test_nms_window_scaling():
    assert search.nms_window((400, 400), 0) == 10
    assert search.nms_window((400, 400), 1) == 5
    assert search.nms_window((400, 400), 4) == 1


# suppression

def test_nms_constant_field_empty():
    assert search.nonlocal_min_suppress(np.full((8, 8), 0.3), 3) == []


def test_nms_single_dip():
    f = np.ones((10, 10))
    f[4, 7] = 0.0
    assert search.nonlocal_min_suppress(f, 3) == [(4, 7)]


def test_nms_two_dips_deeper_wins():
    # dips spanning 3 px (centers 2 apart) share a side-5 neighbourhood
    f = np.ones((16, 16))
    f[8, 5] = 0.2
    f[8, 7] = 0.1
    assert search.nonlocal_min_suppress(f, 5) == [(8, 7)]


def test_nms_window_is_side_length():
    f = np.ones((16, 16))
    f[8, 5] = 0.2
    f[8, 8] = 0.1
    assert search.nonlocal_min_suppress(f, 5) == [(8, 5), (8, 8)]
    assert search.nonlocal_min_suppress(f, 7) == [(8, 8)]


def test_nms_far_dips_both_kept():
    f = np.ones((16, 16))
    f[3, 3] = 0.2
    f[12, 12] = 0.1
    assert search.nonlocal_min_suppress(f, 5) == [(3, 3), (12, 12)]


def test_nms_tie_keeps_first():
    f = np.ones((10, 10))
    f[4, 4] = f[4, 5] = 0.0
    assert search.nonlocal_min_suppress(f, 3) == [(4, 4)]


def test_nms_threshold_strict():
    f = np.ones((10, 10))
    f[5, 5] = 0.5
    assert search.nonlocal_min_suppress(f, 3, threshold=0.5) == []


def test_nms_ignores_unevaluated():
    f = np.full((10, 10), np.inf)
    f[2, 2], f[5, 5], f[7, 7] = 0.5, 0.5, 0.1
    assert search.nonlocal_min_suppress(f, 3) == [(7, 7)]


def test_nms_bad_window():
    with pytest.raises(ValueError):
        search.nonlocal_min_suppress(np.zeros((3, 3)), 0)


@settings(max_examples=60)
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 7))
def test_nms_survivors_are_window_minima(seed, window):
    f = np.random.default_rng(seed).random((14, 14))
    thr = f.mean() - f.std()
    r = max(1, window // 2)
    for y, x in search.nonlocal_min_suppress(f, window):
        assert f[y, x] < thr
        assert f[y, x] <= f[max(0, y - r):y + r + 1, max(0, x - r):x + r + 1].min()


def test_child_offsets():
    off = search.CHILD_OFFSETS
    assert len(off) == 37 and len({tuple(o) for o in off}) == 37
    assert np.abs(off).max() == 3
    ring = off[np.abs(off).max(axis=1) == 3]
    assert len(ring) == 12


# candidate search

def test_unique_room_top1(scene10):
    scene, ctx, sets = scene10
    hits = 0
    for sid, cs in sets.items():
        best = cs.candidates[0][0]
        gt = scene.gt.placements[sid]
        hits += best.k == gt.k and abs(best.tx - gt.tx) <= 2 and abs(best.ty - gt.ty) <= 2
    assert hits >= 9


def test_candidate_set_invariants(scene10):
    scene, ctx, sets = scene10
    by_id = {s.scan_id: s for s in scene.scans}
    for sid, cs in sets.items():
        scores = [s for _, s in cs.candidates]
        assert 1 <= len(cs.candidates) <= 5
        assert scores == sorted(scores)
        pls = cs.placements
        assert len(set(pls)) == len(pls)
        for i in range(len(pls)):
            for j in range(i + 1, len(pls)):
                assert not search._is_duplicate(pls[i], pls[j])
        for pl, sc in cs.candidates:
            assert energy.outside_fraction(by_id[sid], pl, ctx) <= 0.3 + 1e-12
            assert sc == pytest.approx(energy.unary(by_id[sid], pl, ctx), abs=1e-12)


def test_workload_bound(scene10):
    _, _, sets = scene10
    for cs in sets.values():
        ev, mn = cs.evaluations, cs.minima
        for level in range(len(ev) - 1):
            assert ev[level] <= 37 * mn[level + 1]


def test_twin_rooms_both_candidates():
    spec = synth.SceneSpec(seed=1, rooms=6, duplicate_rooms=2, clutter_density=0.0, dropout=0.0)
    scene = synth.gen_scene(spec)
    ctx = floorplan.make_context(scene.floorplan, scene.config)
    rows, cols = spec.layout
    twins = {(rows - 1) * cols + 1, (rows - 1) * cols + 2}
    for scan in scene.scans:
        if scene.gt.rooms[scan.scan_id] not in twins:
            continue
        cs = search.candidate_search(ctx, scan)
        rooms = {synth.room_at(scene.room_labels, p.tx, p.ty) for p in cs.placements}
        assert twins <= rooms


@pytest.mark.parametrize("seed", range(3))
def test_exhaustive_argmin_in_candidates(seed):
    scene = synth.gen_scene(synth.SceneSpec(seed=seed, **SMALL))
    ctx = floorplan.make_context(scene.floorplan, scene.config)
    scan = scene.scans[seed % len(scene.scans)]
    arg, score = search.exhaustive_argmin(ctx, scan)
    cs = search.candidate_search(ctx, scan)
    assert arg in cs.placements
    assert cs.candidates[0][1] == pytest.approx(score, abs=1e-12)


def test_search_deterministic():
    scene = synth.gen_scene(synth.SceneSpec(seed=0, **SMALL))
    ctx = floorplan.make_context(scene.floorplan, scene.config)
    a = search.candidate_search(ctx, scene.scans[1])
    b = search.candidate_search(ctx, scene.scans[1])
    assert a.to_dict() == b.to_dict()


def test_everything_pruned():
    building = np.zeros((40, 40), bool)
    building[0:2, 0:2] = True
    ctx = F.ctx_of(np.zeros((40, 40)), building=building)
    scan = F.scan_of(np.ones((20, 20)), origin=(10, 10))
    with pytest.raises(search.NoCandidates):
        search.candidate_search(ctx, scan)


def test_baseline_kind_scores():
    scene = synth.gen_scene(synth.SceneSpec(seed=0, **SMALL))
    ctx = floorplan.make_context(scene.floorplan, scene.config)
    scan = scene.scans[0]
    cs = search.candidate_search(ctx, scan, SearchParams(kind="masked_ssd"))
    for pl, s in cs.candidates:
        assert s == pytest.approx(energy.baseline_unary("masked_ssd", scan, pl, ctx), abs=1e-12)


def test_candidates_json_roundtrip(tmp_path, scene10):
    _, _, sets = scene10
    path = tmp_path / "c.json"
    search.save_candidates(path, list(sets.values()), ["lost"])
    back, rejected = search.load_candidates(path)
    assert rejected == ["lost"]
    assert [c.to_dict() for c in back] == [c.to_dict() for c in sets.values()]
    assert CandidateSet.from_dict(back[0].to_dict()).placements == back[0].placements
