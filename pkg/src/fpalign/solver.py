"""Discrete pairwise MRF over candidate placements, and its minimizers.

:func:`trws_solve` is sequential tree-reweighted message passing over
monotonic chains in the given variable order. :func:`brute_force_solve`
enumerates every labelling and serves as the exact reference on small
models.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import energy
from .energy import Placement, PotentialWeights


class ModelTooLarge(ValueError):
    pass


@dataclass
class EnergyModel:
    unary: list[np.ndarray]
    edges: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)  # keys (i, j) with i < j
    constant: float = 0.0

    def __post_init__(self):
        self.unary = [np.asarray(u, dtype=np.float64) for u in self.unary]
        if any(u.ndim != 1 or u.size == 0 for u in self.unary):
            raise ValueError("every variable needs a non-empty 1-D unary table")
        clean = {}
        for (i, j), t in self.edges.items():
            t = np.asarray(t, dtype=np.float64)
            if i > j:
                i, j, t = j, i, t.T
            if i == j or not (0 <= i and j < len(self.unary)):
                raise ValueError(f"bad edge {(i, j)}")
            if t.shape != (self.unary[i].size, self.unary[j].size):
                raise ValueError(f"edge {(i, j)} table has shape {t.shape}")
            if (i, j) in clean:
                t = clean[(i, j)] + t
            clean[(i, j)] = t
        self.edges = {e: t for e, t in sorted(clean.items()) if np.any(t != 0)}

    @property
    def n_vars(self) -> int:
        return len(self.unary)

    @property
    def sizes(self) -> list[int]:
        return [u.size for u in self.unary]


@dataclass
class SolveResult:
    assignment: tuple[int, ...]
    energy: float
    lower_bound: float
    iterations: int
    bound_history: list[float] = field(default_factory=list)


def total_energy(model: EnergyModel, assignment) -> float:
    a = tuple(int(x) for x in assignment)
    if len(a) != model.n_vars:
        raise ValueError(f"assignment has {len(a)} labels for {model.n_vars} variables")
    for i, (x, n) in enumerate(zip(a, model.sizes)):
        if not 0 <= x < n:
            raise ValueError(f"label {x} out of range for variable {i} with {n} labels")
    e = model.constant + sum(float(u[x]) for u, x in zip(model.unary, a))
    for (i, j), t in model.edges.items():
        e += float(t[a[i], a[j]])
    return e


def brute_force_solve(model: EnergyModel, limit: int = 10 ** 7) -> SolveResult:
    sizes = model.sizes
    if int(np.prod(sizes, dtype=np.float64)) > limit:
        raise ModelTooLarge(f"{np.prod(sizes, dtype=np.float64):.3g} assignments exceed {limit}")
    n = model.n_vars
    tensor = np.full(tuple(sizes), model.constant)
    for i, u in enumerate(model.unary):
        shape = [1] * n
        shape[i] = sizes[i]
        tensor = tensor + u.reshape(shape)
    for (i, j), t in model.edges.items():
        shape = [1] * n
        shape[i], shape[j] = sizes[i], sizes[j]
        tensor = tensor + t.reshape(shape)
    # argmin returns the first minimum in C order, which is lexicographic label order
    flat = int(np.argmin(tensor))
    a = tuple(int(x) for x in np.unravel_index(flat, tensor.shape))
    e = total_energy(model, a)
    return SolveResult(a, e, e, 1, [e])


# --- TRW-S ------------------------------------------------------------------------

def _chains(n: int, edges: list[tuple[int, int]]) -> list[tuple[list[int], list[int]]]:
    """Split the graph into monotonic chains: (node list, edge index list) each.

    At every node the t-th incoming chain continues along the t-th outgoing
    edge, so node i lies on exactly max(in_i, out_i, 1) chains.
    """
    incoming = [[] for _ in range(n)]
    outgoing = [[] for _ in range(n)]
    for e, (i, j) in enumerate(edges):
        outgoing[i].append(e)
        incoming[j].append(e)
    chain_of_edge: dict[int, int] = {}
    chains: list[tuple[list[int], list[int]]] = []
    for v in range(n):
        arriving = [chain_of_edge[e] for e in incoming[v]]
        for c in arriving:
            chains[c][0].append(v)
        for t, e in enumerate(outgoing[v]):
            if t < len(arriving):
                c = arriving[t]
            else:
                chains.append(([v], []))
                c = len(chains) - 1
            chains[c][1].append(e)
            chain_of_edge[e] = c
        if not incoming[v] and not outgoing[v]:
            chains.append(([v], []))
    return chains


def _chain_min(nodes, edge_ids, node_pot, edge_pot) -> float:
    cost = node_pot[nodes[0]].copy()
    for v, e in zip(nodes[1:], edge_ids):
        cost = (cost[:, None] + edge_pot[e]).min(axis=0) + node_pot[v]
    return float(cost.min())


def trws_solve(model: EnergyModel, max_iters: int = 50, tol: float = 1e-9) -> SolveResult:
    n = model.n_vars
    edges = list(model.edges)
    tables = [model.edges[e] for e in edges]
    n_in = np.zeros(n, dtype=int)
    n_out = np.zeros(n, dtype=int)
    for i, j in edges:
        n_out[i] += 1
        n_in[j] += 1
    gamma = 1.0 / np.maximum(np.maximum(n_in, n_out), 1)
    fwd = [[] for _ in range(n)]  # edges to later nodes
    bwd = [[] for _ in range(n)]  # edges to earlier nodes
    for e, (i, j) in enumerate(edges):
        fwd[i].append(e)
        bwd[j].append(e)
    # msg_to_j[e] lives on x_j, msg_to_i[e] on x_i
    msg_to_j = [np.zeros(model.unary[j].size) for _, j in edges]
    msg_to_i = [np.zeros(model.unary[i].size) for i, _ in edges]
    chains = _chains(n, edges)

    def incoming(v: int) -> np.ndarray:
        h = model.unary[v].copy()
        for e in bwd[v]:
            h += msg_to_j[e]
        for e in fwd[v]:
            h += msg_to_i[e]
        return h

    def bound() -> float:
        node_pot = [gamma[v] * incoming(v) for v in range(n)]
        edge_pot = [t - msg_to_i[e][:, None] - msg_to_j[e][None, :] for e, t in enumerate(tables)]
        return model.constant + sum(_chain_min(nodes, eids, node_pot, edge_pot)
                                    for nodes, eids in chains)

    best = tuple(int(np.argmin(u)) for u in model.unary)
    best_e = total_energy(model, best)
    history: list[float] = []
    prev_assign = None
    iters = 0
    for it in range(max_iters):
        iters = it + 1
        decoded = [0] * n
        for v in range(n):
            h = incoming(v)
            # decode from earlier labels already fixed plus messages from later nodes
            local = model.unary[v].copy()
            for e in bwd[v]:
                local += tables[e][decoded[edges[e][0]], :]
            for e in fwd[v]:
                local += msg_to_i[e]
            decoded[v] = int(np.argmin(local))
            for e in fwd[v]:
                m = (gamma[v] * h - msg_to_i[e])[:, None] + tables[e]
                m = m.min(axis=0)
                msg_to_j[e] = m - m.min()
        for v in range(n - 1, -1, -1):
            h = incoming(v)
            for e in bwd[v]:
                m = (gamma[v] * h - msg_to_j[e])[None, :] + tables[e]
                m = m.min(axis=1)
                msg_to_i[e] = m - m.min()
        assign = tuple(decoded)
        e_now = total_energy(model, assign)
        if e_now < best_e:
            best, best_e = assign, e_now
        lb = bound()
        stable = False
        if history:
            stable = abs(lb - history[-1]) <= tol * max(1.0, abs(lb)) and assign == prev_assign
        history.append(lb)
        prev_assign = assign
        if stable or lb >= best_e - tol * max(1.0, abs(best_e)):
            break
    return SolveResult(best, best_e, history[-1] if history else best_e, iters, history)


def solve(model: EnergyModel, method: str = "trws", max_iters: int = 50) -> SolveResult:
    if method == "trws":
        return trws_solve(model, max_iters)
    if method == "brute_force":
        return brute_force_solve(model)
    raise ValueError(f"unknown solver {method!r}")


# --- assembly -----------------------------------------------------------------------

def coverage_weight(weights: PotentialWeights, n_scans: int) -> float:
    """Coverage is normalized per pixel, so it is scaled up to match a sum of per-scan unaries."""
    return weights.w_cov * (n_scans if weights.cov_per_scan else 1)


def assemble_model(scans, candidate_sets, ctx, weights: PotentialWeights = PotentialWeights(),
                   use_sf: bool = True, use_ss: bool = True, use_cov: bool = True) -> EnergyModel:
    """One variable per scan whose labels are its candidate placements."""
    cands = [list(cs.placements) if hasattr(cs, "placements") else list(cs) for cs in candidate_sets]
    if len(cands) != len(scans):
        raise ValueError("one candidate list per scan is required")
    for scan, c in zip(scans, cands):
        if not c:
            raise ValueError(f"scan {scan.scan_id} has no candidates")
    unary = []
    for scan, c in zip(scans, cands):
        if use_sf:
            unary.append(np.array([energy.unary(scan, pl, ctx, weights) for pl in c]))
        else:
            unary.append(np.zeros(len(c)))
    edges: dict[tuple[int, int], np.ndarray] = {}
    n = len(scans)
    if use_ss and weights.w_ss:
        for i, j in itertools.combinations(range(n), 2):
            t = np.array([[energy.scan_pair_potential(scans[i], a, scans[j], b) for b in cands[j]]
                          for a in cands[i]])
            if np.any(t != 0):
                edges[(i, j)] = weights.w_ss * t
    if use_cov and weights.w_cov:
        cov = energy.coverage_terms(cands, scans, ctx, coverage_weight(weights, n))
        for e, t in cov.pair_tables.items():
            edges[e] = edges.get(e, 0.0) + t
        unary = [u + cu for u, cu in zip(unary, cov.unary)]
    return EnergyModel(unary, edges)


def model_terms(scans, candidate_sets, ctx, weights: PotentialWeights, assignment,
                use_sf=True, use_ss=True, use_cov=True) -> dict[str, float]:
    """Per-term energy of one assignment, for reporting."""
    cands = [list(cs.placements) if hasattr(cs, "placements") else list(cs) for cs in candidate_sets]
    chosen = [c[a] for c, a in zip(cands, assignment)]
    sf = sum(energy.unary(s, p, ctx, weights) for s, p in zip(scans, chosen)) if use_sf else 0.0
    ss = 0.0
    if use_ss and weights.w_ss:
        for i, j in itertools.combinations(range(len(scans)), 2):
            ss += weights.w_ss * energy.scan_pair_potential(scans[i], chosen[i], scans[j], chosen[j])
    cov = 0.0
    if use_cov and weights.w_cov:
        w_cov = coverage_weight(weights, len(scans))
        cov = energy.coverage_terms(cands, scans, ctx, w_cov).energy(list(assignment))
    return {"scan_floorplan": float(sf), "scan_scan": float(ss), "coverage": float(cov),
            "total": float(sf + ss + cov)}


def placements_of(candidate_sets, assignment) -> list[Placement]:
    return [cs.placements[a] for cs, a in zip(candidate_sets, assignment)]
