import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import fixtures as F
from fpalign import energy, floorplan, raster, synth
from fpalign.energy import FloorLayers, Placement, PotentialWeights, UnaryEvaluator


# placements and weights

def test_placement_coerces_ints():
    pl = Placement(np.int64(1), np.int32(4), 5.0)
    assert type(pl.tx) is int and pl.to_dict() == {"k": 1, "tx": 4, "ty": 5}


def test_weights_nonnegative():
    with pytest.raises(ValueError):
        PotentialWeights(w_ss=-0.1)


def test_map_pixels_rotation():
    scan = F.scan_of(np.ones((3, 5)), origin=(2, 1))
    fx, fy = energy.map_pixels(scan, Placement(1, 10, 10), np.array([4]), np.array([1]))
    assert (int(fx[0]), int(fy[0])) == (10, 8)


# semantic

@pytest.mark.parametrize("case", range(5))
def test_semantic_fixtures(case):
    ctx, scan, pl, expect = F.semantic_fixtures()[case]
    assert abs(energy.semantic_penalty(scan, pl, ctx) - expect) < 1e-9


def test_semantic_no_doors_is_zero():
    ctx = F.ctx_of(np.full((6, 6), 0.2))
    assert energy.semantic_penalty(F.scan_of(np.ones((2, 2))), Placement(0, 1, 1), ctx) == 0.0


# geometric

def test_geometric_fixture():
    ctx, scan, pl, expect = F.geometric_fixture()
    assert abs(energy.geometric_penalty(scan, pl, ctx) - expect) < 1e-9
    assert abs(energy.semantic_penalty(scan, pl, ctx)) < 1e-9


def _ring(n):
    r = np.zeros((n, n))
    r[0, :] = r[-1, :] = r[:, 0] = r[:, -1] = 1.0
    return r


def test_geometric_perfect_fit_zero():
    clean = np.ones((20, 20))
    clean[5:15, 5:15] = 1.0 - _ring(10)
    scan = F.scan_of(_ring(10), origin=(4, 4))
    ctx = F.ctx_of(clean)
    g = energy.geometric_penalty(scan, Placement(0, 9, 9), ctx)
    assert g == 0.0


def test_geometric_blank_floorplan_half():
    scan = F.scan_of(_ring(6), origin=(2, 2))
    ctx = F.ctx_of(np.ones((30, 30)))
    assert energy.geometric_penalty(scan, Placement(0, 12, 12), ctx) == pytest.approx(0.5)


def test_geometric_scale_invariant_on_blank():
    p = np.random.default_rng(0).random((7, 7))
    ctx = F.ctx_of(np.ones((30, 30)))
    a = energy.geometric_penalty(F.scan_of(p, origin=(3, 3)), Placement(2, 10, 10), ctx)
    b = energy.geometric_penalty(F.scan_of(0.5 * p, origin=(3, 3)), Placement(2, 10, 10), ctx)
    assert a == pytest.approx(b, abs=1e-12)


def test_geometric_needs_evidence():
    with pytest.raises(ValueError):
        energy.geometric_penalty(F.scan_of(np.zeros((3, 3))), Placement(0, 5, 5),
                                 F.ctx_of(np.ones((10, 10))))


def test_geometric_off_raster_unexplained():
    ctx = F.ctx_of(np.zeros((8, 8)))
    scan = F.scan_of(np.ones((4, 4)), origin=(0, 0))
    # everything lands left of the raster
    assert energy.geometric_penalty(scan, Placement(0, -10, 2), ctx) == pytest.approx(0.5)


# unary

def test_unary_weights():
    ctx, scan, pl, geo = F.geometric_fixture()
    assert energy.unary(scan, pl, ctx) == pytest.approx(geo)
    ctx2, scan2, pl2, sem = F.semantic_fixtures()[1]
    g2 = energy.geometric_penalty(scan2, pl2, ctx2)
    assert energy.unary(scan2, pl2, ctx2) == pytest.approx(sem + g2)
    assert energy.unary(scan2, pl2, ctx2, PotentialWeights(0, 1)) == pytest.approx(g2)
    assert energy.unary(scan2, pl2, ctx2, PotentialWeights(2.0, 0.5)) == pytest.approx(2 * sem + 0.5 * g2)


# baselines

def test_naive_ssd_zero_on_exact_ink():
    clean = np.ones((12, 12))
    clean[3:9, 3:9] = 1.0 - _ring(6) * 0.7
    scan = F.scan_of(_ring(6) * 0.7, origin=(0, 0))
    assert energy.baseline_unary("naive_ssd", scan, Placement(0, 3, 3), F.ctx_of(clean)) == pytest.approx(0)


def test_dt_zero_on_ink():
    clean = np.ones((12, 12))
    clean[3:9, 3:9] = 1.0 - _ring(6)
    scan = F.scan_of(_ring(6), origin=(0, 0))
    assert energy.baseline_unary("distance_transform", scan, Placement(0, 3, 3), F.ctx_of(clean)) == 0.0


def test_dt_single_pixel_three():
    clean = np.ones((10, 10))
    clean[5, 2] = 0.0
    scan = F.scan_of(np.ones((1, 1)))
    assert energy.baseline_unary("distance_transform", scan, Placement(0, 5, 5), F.ctx_of(clean)) == 3.0


def test_masked_ssd_restricted_to_free_space():
    p = np.zeros((3, 3))
    p[0, 0] = 1.0
    free = np.zeros((3, 3), bool)
    free[1:, 1:] = True
    scan = F.scan_of(p, free, origin=(1, 1))
    ctx = F.ctx_of(np.ones((9, 9)))
    assert energy.baseline_unary("masked_ssd", scan, Placement(0, 4, 4), ctx) == 0.0
    assert energy.baseline_unary("naive_ssd", scan, Placement(0, 4, 4), ctx) == pytest.approx(1 / 9)


def test_unknown_baseline():
    with pytest.raises(ValueError):
        energy.baseline_unary("ncc", F.scan_of(np.ones((1, 1))), Placement(0, 0, 0),
                              F.ctx_of(np.zeros((3, 3))))


# scan-to-scan

def _room_pack(n=32, mpp=0.1, scan_id="j"):
    p = _ring(n)
    return F.scan_of(p, None, origin=(n // 2, n // 2), mpp=mpp, scan_id=scan_id)


def test_pair_self_reward():
    s = _room_pack()
    pl = Placement(0, 50, 50)
    assert energy.scan_pair_potential(s, pl, s, pl) == pytest.approx(-1.0)


def test_pair_disjoint_zero():
    s = _room_pack()
    assert energy.scan_pair_potential(s, Placement(0, 20, 20), s, Placement(1, 200, 20)) == 0.0


def test_pair_wall_in_free_space_penalized():
    big = _room_pack(32)
    small = F.scan_of(_ring(10), origin=(5, 5), scan_id="i")
    v = energy.scan_pair_potential(small, Placement(0, 16, 16), big, Placement(0, 16, 16))
    # 36 ring pixels of the small scan sit in the big scan's eroded free space;
    # total wall mass 36 + 124; the big scan shows no evidence on the overlap (NCC 0)
    assert v == pytest.approx(36 / 160)


def _random_pack(rng, scan_id):
    h, w = rng.integers(6, 16, 2)
    p = np.where(rng.random((h, w)) < 0.3, rng.random((h, w)), 0.0)
    free = rng.random((h, w)) < 0.7
    o = (int(rng.integers(w)), int(rng.integers(h)))
    free[o[1], o[0]] = True
    return F.scan_of(p, free, origin=o, mpp=0.1, scan_id=scan_id)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_pair_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = _random_pack(rng, "a"), _random_pack(rng, "b")
    pa = Placement(int(rng.integers(4)), int(rng.integers(0, 12)), int(rng.integers(0, 12)))
    pb = Placement(int(rng.integers(4)), int(rng.integers(0, 12)), int(rng.integers(0, 12)))
    f = energy.scan_pair_potential(a, pa, b, pb)
    assert f == pytest.approx(energy.scan_pair_potential(b, pb, a, pa), abs=1e-12)
    assert -1.0 - 1e-12 <= f <= 1.0 + 1e-12


# coverage

def test_coverage_single_contested_pixel():
    ctx, scans, cands = F.coverage_pixel_fixture()
    t = energy.coverage_terms(cands, scans, ctx, w_cov=2.0)
    table = t.pair_tables[(0, 1)]
    assert table[0, 0] == 0.5 * 2.0      # both cover
    assert table[0, 1] == table[1, 0] == 0.0   # exactly one covers
    assert table[1, 1] == 1.0 * 2.0      # neither
    for a in itertools.product(range(2), range(2)):
        assert t.energy(a) == energy.coverage_energy_direct(a, cands, scans, ctx, 2.0)


def test_coverage_strip():
    ctx, scans, cands = F.coverage_strip_fixture()
    t = energy.coverage_terms(cands, scans, ctx, w_cov=1.5)
    assert t.n_contested == 3
    assert t.energy([0, 0]) == (0 + 0.5 + 0) * 1.5 / 3
    assert t.energy([0, 0]) == energy.coverage_energy_direct([0, 0], cands, scans, ctx, 1.5)


def test_coverage_needs_candidates():
    ctx, scans, cands = F.coverage_strip_fixture()
    with pytest.raises(ValueError):
        energy.coverage_terms([[], cands[1]], scans, ctx)


def test_coverage_split_neither():
    ctx, scans, cands = F.coverage_neither_fixture()
    # literal rule: three "neither" pairs cost 1 each; split: 1 in total
    lit = energy.coverage_terms(cands, scans, ctx, split_none=False)
    split = energy.coverage_terms(cands, scans, ctx)
    assert lit.energy([1, 1, 1]) == 3.0
    assert split.energy([1, 1, 1]) == pytest.approx(1.0)
    # one cover leaves a single "neither" pair of the three
    assert split.energy([0, 1, 1]) == pytest.approx(1 / 3)


def _random_cov_instance(rng):
    h, w = rng.integers(8, 40, 2)
    building = rng.random((h, w)) < 0.8
    building[0, 0] = True
    ctx = F.ctx_of(np.ones((h, w)), building=building)
    scans, cands = [], []
    for s in range(int(rng.integers(1, 4))):
        sh, sw = rng.integers(2, 12, 2)
        free = rng.random((sh, sw)) < 0.6
        o = (int(rng.integers(sw)), int(rng.integers(sh)))
        free[o[1], o[0]] = True
        scans.append(F.scan_of(np.ones((sh, sw)), free, origin=o, scan_id=str(s)))
        cands.append([Placement(int(rng.integers(4)), int(rng.integers(-3, w + 3)),
                                int(rng.integers(-3, h + 3))) for _ in range(int(rng.integers(1, 4)))])
    return ctx, scans, cands


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.booleans(), st.booleans())
def test_coverage_tables_match_direct(seed, split, with_unary):
    rng = np.random.default_rng(seed)
    ctx, scans, cands = _random_cov_instance(rng)
    t = energy.coverage_terms(cands, scans, ctx, 1.0, with_unary, split)
    for a in itertools.product(*[range(len(c)) for c in cands]):
        direct = energy.coverage_energy_direct(a, cands, scans, ctx, 1.0, with_unary, split)
        assert t.energy(a) == pytest.approx(direct, abs=1e-12)


# invariances and batched evaluation

@pytest.fixture(scope="module")
def small_scene():
    scene = synth.gen_scene(synth.SceneSpec(seed=5, rooms=4, grid=(2, 2), room_size_range=(3.0, 4.5),
                                            n_rays=1024, margin=8))
    return scene, floorplan.make_context(scene.floorplan, scene.config)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_joint_rotation_invariance(small_scene, k):
    scene, ctx = small_scene
    rctx = ctx.rotated(k)
    rng = np.random.default_rng(k)
    for scan in scene.scans[:2]:
        rscan = scan.rotated(k)
        for _ in range(5):
            pl = Placement(int(rng.integers(4)), int(rng.integers(ctx.shape[1])),
                           int(rng.integers(ctx.shape[0])))
            tx, ty = raster.rotate_point(pl.tx, pl.ty, ctx.shape, k)
            rpl = Placement(pl.k, tx, ty)
            assert energy.semantic_penalty(rscan, rpl, rctx) == pytest.approx(
                energy.semantic_penalty(scan, pl, ctx), abs=1e-12)
            assert energy.geometric_penalty(rscan, rpl, rctx) == pytest.approx(
                energy.geometric_penalty(scan, pl, ctx), abs=1e-12)


@pytest.mark.parametrize("kind", energy.UNARY_KINDS)
def test_evaluator_matches_reference(small_scene, kind):
    scene, ctx = small_scene
    floor = FloorLayers.from_context(ctx)
    rng = np.random.default_rng(0)
    h, w = ctx.shape
    for scan in scene.scans:
        for k in range(4):
            tx = rng.integers(-5, w + 5, 12)
            ty = rng.integers(-5, h + 5, 12)
            got = UnaryEvaluator(scan.rotated(k), floor, kind).scores(tx, ty)
            ref = [energy.unary_of_kind(kind, scan, Placement(k, x, y), ctx) for x, y in zip(tx, ty)]
            assert np.allclose(got, ref, atol=1e-10)


def test_evaluator_pruning_matches_reference(small_scene):
    scene, ctx = small_scene
    floor = FloorLayers.from_context(ctx)
    scan = scene.scans[0]
    h, w = ctx.shape
    tx, ty = (a.ravel() for a in np.meshgrid(np.arange(0, w, 7), np.arange(0, h, 7)))
    kept = UnaryEvaluator(scan, floor).kept(tx, ty)
    ref = [energy.outside_fraction(scan, Placement(0, x, y), ctx) <= 0.3 for x, y in zip(tx, ty)]
    assert np.array_equal(kept, ref)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_penalties_in_range(seed):
    rng = np.random.default_rng(seed)
    h, w = rng.integers(10, 30, 2)
    clean = np.clip(rng.random((h, w)) + 0.3, 0, 1)
    ctx = F.ctx_of(clean, rng.random((h, w)) < 0.1)
    scan = _random_pack(rng, "s")
    if not (scan.point_ev > 0).any():
        return
    doors = (scan.point_ev > 0) & (rng.random(scan.shape) < 0.3)
    scan = F.scan_of(scan.point_ev, scan.free_space, doors, scan.origin_px)
    pl = Placement(int(rng.integers(4)), int(rng.integers(-3, w + 3)), int(rng.integers(-3, h + 3)))
    assert 0.0 <= energy.semantic_penalty(scan, pl, ctx) <= 1.0
    g = energy.geometric_penalty(scan, pl, ctx)
    assert 0.0 <= g <= 1.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_d1_vanishes_under_dominating_df(seed):
    rng = np.random.default_rng(seed)
    scan = _random_pack(rng, "s")
    if not (scan.point_ev > 0).any():
        return
    # all-ink floorplan: DF = 1 everywhere, and every ink pixel (1) exceeds dilated evidence
    ctx = F.ctx_of(np.zeros((30, 30)))
    pl = Placement(int(rng.integers(4)), 15, 15)
    g = energy.geometric_penalty(scan, pl, ctx)
    ys, xs = np.nonzero(scan.free_space)
    fx, fy = energy.map_pixels(scan, pl, xs, ys)
    inside = (fx >= 0) & (fx < 30) & (fy >= 0) & (fy < 30)
    dp = raster.dilate_gray(scan.point_ev, 5)[ys, xs]
    d2 = (np.maximum(0, 1 - dp) * inside).sum() / inside.sum()
    assert g == pytest.approx(0.5 * d2, abs=1e-12)


# stacking bias

def _twin_pair(seed):
    spec = synth.SceneSpec(seed=seed, rooms=4, duplicate_rooms=2, clutter_density=0.0, dropout=0.0)
    scene = synth.gen_scene(spec)
    ctx = floorplan.make_context(scene.floorplan, scene.config)
    rows, cols = spec.layout
    room_a, room_b = (rows - 1) * cols + 1, (rows - 1) * cols + 2
    by_room = {scene.gt.rooms[s.scan_id]: s for s in scene.scans}
    a, b = by_room[room_a], by_room[room_b]
    ya, xa = np.nonzero(scene.room_labels == room_a)
    yb, xb = np.nonzero(scene.room_labels == room_b)
    dx, dy = int(xb.min() - xa.min()), int(yb.min() - ya.min())
    ga, gb = scene.gt.placements[a.scan_id], scene.gt.placements[b.scan_id]
    return ctx, a, b, ga, gb, Placement(gb.k, gb.tx - dx, gb.ty - dy)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_stacking_favoured_by_ss_penalized_by_coverage(seed):
    ctx, a, b, ga, gb, stacked = _twin_pair(seed)
    assert energy.scan_pair_potential(a, ga, b, stacked) < energy.scan_pair_potential(a, ga, b, gb)
    cands = [[ga], [gb, stacked]]
    t = energy.coverage_terms(cands, [a, b], ctx)
    assert t.energy([0, 1]) > t.energy([0, 0])
