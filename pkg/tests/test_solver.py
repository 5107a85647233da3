import itertools
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from models import random_model, random_tree
from fpalign import floorplan, search, solver, synth
from fpalign.energy import PotentialWeights
from fpalign.solver import EnergyModel

seeds = st.integers(0, 2 ** 31 - 1)


# model

def test_model_validates_tables():
    with pytest.raises(ValueError):
        EnergyModel([np.zeros(2), np.zeros(3)], {(0, 1): np.zeros((3, 2))})
    with pytest.raises(ValueError):
        EnergyModel([np.zeros(2)], {(0, 0): np.zeros((2, 2))})
    with pytest.raises(ValueError):
        EnergyModel([np.zeros(0)])


def test_model_drops_zero_edges_and_orients():
    m = EnergyModel([np.zeros(2), np.zeros(3), np.zeros(1)],
                    {(1, 0): np.ones((3, 2)), (1, 2): np.zeros((3, 1))})
    assert list(m.edges) == [(0, 1)]
    assert m.edges[(0, 1)].shape == (2, 3)


@settings(max_examples=50)
@given(seeds)
def test_model_edge_invariants(seed):
    m = random_model(np.random.default_rng(seed))
    for (i, j), t in m.edges.items():
        assert i < j and t.shape == (m.sizes[i], m.sizes[j]) and np.any(t != 0)


# total energy

def test_total_energy_edgeless():
    m = EnergyModel([np.array([1.0, 2.0]), np.array([5.0, -1.0, 0.5])], constant=0.25)
    assert solver.total_energy(m, (1, 2)) == 2.0 + 0.5 + 0.25


def test_total_energy_hand_sum():
    m = EnergyModel([np.array([0.0, 1.0]), np.array([2.0, 0.0])],
                    {(0, 1): np.array([[0.5, -1.0], [3.0, 0.25]])})
    assert [solver.total_energy(m, a) for a in itertools.product(range(2), range(2))] == \
        [2.5, -1.0, 6.0, 1.25]


def test_total_energy_bad_label():
    m = EnergyModel([np.zeros(2)])
    with pytest.raises(ValueError):
        solver.total_energy(m, (2,))
    with pytest.raises(ValueError):
        solver.total_energy(m, (0, 0))


@settings(max_examples=30)
@given(seeds)
def test_brute_force_energy_consistent(seed):
    m = random_model(np.random.default_rng(seed), max_vars=5, max_labels=4)
    res = solver.brute_force_solve(m)
    assert res.energy == pytest.approx(solver.total_energy(m, res.assignment))
    best = min(solver.total_energy(m, a) for a in itertools.product(*[range(s) for s in m.sizes]))
    assert res.energy == pytest.approx(best)


# brute force

def test_brute_force_single_var():
    assert solver.brute_force_solve(EnergyModel([np.array([3.0, -2.0, 1.0])])).assignment == (1,)


def test_brute_force_tie_lexicographic():
    m = EnergyModel([np.zeros(2), np.zeros(2)], {(0, 1): np.array([[1.0, 0.0], [0.0, 1.0]])})
    assert solver.brute_force_solve(m).assignment == (0, 1)


def test_brute_force_refuses_large():
    m = EnergyModel([np.zeros(10)] * 8)
    with pytest.raises(solver.ModelTooLarge):
        solver.brute_force_solve(m)


def test_brute_force_speed():
    rng = np.random.default_rng(0)
    m = EnergyModel([rng.normal(size=5) for _ in range(8)],
                    {(i, j): rng.normal(size=(5, 5)) for i in range(8) for j in range(i + 1, 8)})
    t = time.perf_counter()
    solver.brute_force_solve(m)
    assert time.perf_counter() - t < 1.0


# TRW-S

def test_trws_edgeless():
    m = EnergyModel([np.array([2.0, 1.0]), np.array([-1.0, 0.0, 4.0])])
    res = solver.trws_solve(m)
    assert res.assignment == (1, 0)
    assert res.lower_bound == pytest.approx(res.energy) and res.iterations == 1


def test_trws_submodular_pair_exact():
    m = EnergyModel([np.array([0.0, 0.3]), np.array([0.4, 0.0])],
                    {(0, 1): np.array([[0.0, 1.0], [1.0, 0.0]])})
    res, ref = solver.trws_solve(m), solver.brute_force_solve(m)
    assert res.energy == ref.energy and res.assignment == ref.assignment


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_trws_exact_on_trees(seed):
    m = random_tree(np.random.default_rng(seed))
    assert solver.trws_solve(m).energy == pytest.approx(solver.brute_force_solve(m).energy, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_trws_bound_properties(seed):
    m = random_model(np.random.default_rng(seed))
    res = solver.trws_solve(m)
    opt = solver.brute_force_solve(m).energy
    h = np.array(res.bound_history)
    assert np.all(np.diff(h) >= -1e-9 * np.maximum(1, np.abs(h[1:])))
    assert res.lower_bound <= opt + 1e-9
    assert res.energy >= res.lower_bound - 1e-9
    assert np.all(h <= res.energy + 1e-9)
    assert res.energy == pytest.approx(solver.total_energy(m, res.assignment))


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_trws_label_permutation(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, max_vars=6)
    perms = [rng.permutation(s) for s in m.sizes]
    unary = [u[p] for u, p in zip(m.unary, perms)]
    edges = {(i, j): t[np.ix_(perms[i], perms[j])] for (i, j), t in m.edges.items()}
    pm = EnergyModel(unary, edges, m.constant)
    a, b = solver.trws_solve(m), solver.trws_solve(pm)
    assert tuple(int(p[x]) for p, x in zip(perms, b.assignment)) == a.assignment
    assert b.energy == pytest.approx(a.energy)


def test_trws_deterministic():
    m = random_model(np.random.default_rng(7))
    a, b = solver.trws_solve(m, 20), solver.trws_solve(m, 20)
    assert a == b


def test_trws_iteration_cap():
    rng = np.random.default_rng(3)
    m = EnergyModel([rng.normal(size=5) for _ in range(8)],
                    {(i, j): rng.normal(size=(5, 5)) * 3 for i in range(8) for j in range(i + 1, 8)})
    assert solver.trws_solve(m, max_iters=3).iterations <= 3


def test_solve_dispatch():
    m = random_model(np.random.default_rng(1))
    assert solver.solve(m, "brute_force").energy <= solver.solve(m).energy + 1e-9
    with pytest.raises(ValueError):
        solver.solve(m, "icm")


# assembly

@pytest.fixture(scope="module")
def five():
    scene = synth.gen_scene(synth.SceneSpec(seed=0, rooms=5))
    ctx = floorplan.make_context(scene.floorplan, scene.config)
    cands = []
    for s in scene.scans:
        g = scene.gt.placements[s.scan_id]
        cs = search.candidate_search(ctx, s)
        cands.append([g] + [p for p in cs.placements if not synth.placement_correct(p, g)][:4])
    return scene, ctx, cands


def test_assemble_two_by_two(five):
    scene, ctx, cands = five
    m = solver.assemble_model(scene.scans[:2], [c[:2] for c in cands[:2]], ctx)
    assert m.n_vars == 2 and m.sizes == [2, 2] and len(m.edges) <= 1
    assert all(t.shape == (2, 2) for t in m.edges.values())


def test_assemble_decoupled(five):
    scene, ctx, cands = five
    m = solver.assemble_model(scene.scans, cands, ctx, PotentialWeights(w_ss=0, w_cov=0))
    assert not m.edges
    assert solver.trws_solve(m).assignment == tuple(int(np.argmin(u)) for u in m.unary)


def test_assemble_missing_candidates(five):
    scene, ctx, cands = five
    with pytest.raises(ValueError):
        solver.assemble_model(scene.scans[:2], [cands[0], []], ctx)


def test_ground_truth_beats_single_perturbations(five):
    scene, ctx, cands = five
    m = solver.assemble_model(scene.scans, cands, ctx)
    base = solver.total_energy(m, [0] * len(cands))
    for i, c in enumerate(cands):
        for label in range(1, len(c)):
            a = [0] * len(cands)
            a[i] = label
            assert solver.total_energy(m, a) > base


def test_model_terms_sum_to_energy(five):
    scene, ctx, cands = five
    w = PotentialWeights()
    m = solver.assemble_model(scene.scans, cands, ctx, w)
    a = [0, 1, 0, 2, 1]
    terms = solver.model_terms(scene.scans, cands, ctx, w, a)
    assert terms["total"] == pytest.approx(solver.total_energy(m, a), abs=1e-9)


def test_coverage_weight_per_scan():
    assert solver.coverage_weight(PotentialWeights(w_cov=0.5), 8) == 4.0
    assert solver.coverage_weight(PotentialWeights(w_cov=0.5, cov_per_scan=False), 8) == 0.5
