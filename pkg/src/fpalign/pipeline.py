"""Glue between the modules: configuration, batch search, solving, scoring, rendering."""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import energy, floorplan, raster, scanprep, search, solver, synth
from .energy import Placement, PotentialWeights
from .floorplan import FloorplanConfig, FloorplanContext
from .scanprep import EvidenceParams, ScanEvidence
from .search import CandidateSet, SearchParams

ABLATIONS = {
    "SF": (True, False, False),
    "SF+SS": (True, True, False),
    "SF+F": (True, False, True),
    "SF+SS+F": (True, True, True),
}


class BadInput(ValueError):
    """Missing or malformed user input (maps to exit code 2)."""


@dataclass(frozen=True)
class Switches:
    use_sf: bool = True
    use_ss: bool = True
    use_cov: bool = True

    @classmethod
    def named(cls, name: str) -> "Switches":
        if name not in ABLATIONS:
            raise BadInput(f"unknown ablation {name!r}; choose from {', '.join(ABLATIONS)}")
        return cls(*ABLATIONS[name])

    @property
    def name(self) -> str:
        parts = [n for n, on in zip(("SF", "SS", "F"), (self.use_sf, self.use_ss, self.use_cov)) if on]
        return "+".join(parts) or "none"


@dataclass(frozen=True)
class SolverParams:
    method: str = "trws"
    max_iters: int = 50


@dataclass
class PipelineConfig:
    floorplan_path: Path | None = None
    scans_dir: Path | None = None
    out_dir: Path = Path("run")
    floorplan: FloorplanConfig | None = None
    weights: PotentialWeights = field(default_factory=PotentialWeights)
    switches: Switches = field(default_factory=Switches)
    search: SearchParams = field(default_factory=SearchParams)
    solver: SolverParams = field(default_factory=SolverParams)
    evidence: EvidenceParams = field(default_factory=EvidenceParams)
    baseline: str = "ours"

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path = Path(".")) -> "PipelineConfig":
        known = {"paths", "floorplan", "weights", "switches", "search", "solver", "evidence", "baseline"}
        extra = set(d) - known
        if extra:
            raise BadInput(f"unknown config keys: {', '.join(sorted(extra))}")
        paths = d.get("paths", {})
        # synth scene directories keep their inputs next to config.json
        fp = paths.get("floorplan", "floorplan.png")
        sc = paths.get("scans", "scans")
        try:
            weights = PotentialWeights(**d.get("weights", {}))
            sw = Switches(**d.get("switches", {}))
            sp = SolverParams(**d.get("solver", {}))
            ev = EvidenceParams(**d.get("evidence", {}))
            fcfg = FloorplanConfig.from_dict(d["floorplan"]) if d.get("floorplan") else None
        except (TypeError, KeyError) as exc:
            raise BadInput(f"malformed config: {exc}") from exc
        baseline = d.get("baseline", "ours")
        if baseline not in energy.UNARY_KINDS:
            raise BadInput(f"unknown baseline {baseline!r}")
        sp_params = SearchParams.from_dict(d.get("search", {}), weights)
        return cls(
            floorplan_path=base_dir / fp,
            scans_dir=base_dir / sc,
            out_dir=base_dir / paths.get("out", "run"),
            floorplan=fcfg, weights=weights, switches=sw, search=sp_params,
            solver=sp, evidence=ev, baseline=baseline,
        )

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        p = Path(path)
        if not p.is_file():
            raise BadInput(f"config file not found: {p}")
        try:
            d = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise BadInput(f"{p}: invalid JSON ({exc})") from exc
        return cls.from_dict(d, p.parent)

    def to_dict(self) -> dict:
        s = self.search
        return {
            "paths": {"floorplan": str(self.floorplan_path) if self.floorplan_path else None,
                      "scans": str(self.scans_dir) if self.scans_dir else None,
                      "out": str(self.out_dir)},
            "floorplan": self.floorplan.to_dict() if self.floorplan else None,
            "weights": asdict(self.weights),
            "switches": asdict(self.switches),
            "search": {"levels": s.levels, "n_candidates": s.n_candidates, "kind": s.kind,
                       "nms_divisor": s.nms_divisor},
            "solver": asdict(self.solver),
            "evidence": asdict(self.evidence),
            "baseline": self.baseline,
        }


# --- layout of the output directory ---------------------------------------------

def context_dir(out: Path) -> Path:
    return Path(out) / "context"


def evidence_dir(out: Path) -> Path:
    return Path(out) / "evidence"


def candidates_path(out: Path, kind: str = "ours") -> Path:
    return Path(out) / ("candidates.json" if kind == "ours" else f"candidates_{kind}.json")


# --- preprocessing -----------------------------------------------------------------

def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def scan_inputs(scans_dir: Path) -> list[Path]:
    """Point clouds (*.ply) and ready evidence packs (*.meta.json), name-sorted."""
    d = Path(scans_dir)
    return sorted(list(d.glob("*.ply")) + list(d.glob("*.meta.json")))


def input_manifest(cfg: PipelineConfig) -> dict:
    # keyed by role and name so a moved run directory stays up to date
    files = scan_inputs(cfg.scans_dir)
    for p in list(cfg.scans_dir.glob("*.meta.json")):
        stem = p.name[: -len(".meta.json")]
        files += [cfg.scans_dir / f"{stem}.{layer}.png" for layer in ("point", "free", "doors")]
    digests = {"floorplan": _digest(cfg.floorplan_path)}
    digests.update({f"scans/{p.name}": _digest(p) for p in sorted(set(files)) if p.exists()})
    return {"files": digests, "floorplan": cfg.floorplan.to_dict(), "evidence": asdict(cfg.evidence)}


def preprocess(cfg: PipelineConfig, force: bool = False) -> tuple[bool, FloorplanContext, list[ScanEvidence]]:
    """Build the floorplan context and per-scan evidence; returns (did_work, ctx, scans)."""
    if cfg.floorplan_path is None or not cfg.floorplan_path.is_file():
        raise BadInput(f"floorplan not found: {cfg.floorplan_path}")
    if cfg.scans_dir is None or not cfg.scans_dir.is_dir():
        raise BadInput(f"scans directory not found: {cfg.scans_dir}")
    if cfg.floorplan is None:
        raise BadInput("config has no floorplan section (ruler and door template)")
    inputs = scan_inputs(cfg.scans_dir)
    if not inputs:
        raise BadInput(f"no *.ply or evidence packs in {cfg.scans_dir}")
    out = Path(cfg.out_dir)
    manifest_path = out / "preprocess.json"
    manifest = input_manifest(cfg)
    if not force and manifest_path.is_file() and json.loads(manifest_path.read_text()) == manifest:
        if (context_dir(out) / "context.json").is_file():
            return False, *load_inputs(out)
    ctx = floorplan.make_context(raster.load_gray(cfg.floorplan_path), cfg.floorplan)
    floorplan.save_context(ctx, context_dir(out))
    ev_dir = evidence_dir(out)
    ev_dir.mkdir(parents=True, exist_ok=True)
    for old in ev_dir.glob("*"):
        old.unlink()
    scans = []
    for p in inputs:
        if p.suffix == ".ply":
            ev = scanprep.scan_to_evidence(scanprep.read_ply(p), ctx.meters_per_pixel,
                                           cfg.evidence, scan_id=p.stem)
        else:
            stem = p.name[: -len(".meta.json")]
            ev = scanprep.resample_evidence(scanprep.load_evidence(p.parent, stem), ctx.meters_per_pixel)
        scanprep.save_evidence(ev, ev_dir, ev.scan_id)
        scans.append(ev)
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return True, *load_inputs(out)


def load_inputs(out: Path) -> tuple[FloorplanContext, list[ScanEvidence]]:
    cdir, edir = context_dir(out), evidence_dir(out)
    if not (cdir / "context.json").is_file():
        raise BadInput(f"{out}: no preprocessed context; run preprocess first")
    ctx = floorplan.load_context(cdir)
    scans = [scanprep.load_evidence(edir, s) for s in scanprep.list_evidence_stems(edir)]
    if not scans:
        raise BadInput(f"{edir}: no evidence packs")
    return ctx, scans


# --- candidates and solving ---------------------------------------------------------

def search_all(ctx: FloorplanContext, scans: list[ScanEvidence], params: SearchParams,
               threads: int = 1) -> tuple[list[CandidateSet], list[str]]:
    """Candidate sets in scan order, plus the ids of scans no placement survives for."""
    floor = search.floor_pyramid(ctx, params.levels)

    def one(scan):
        try:
            return search.candidate_search(ctx, scan, params, floor)
        except search.NoCandidates:
            return None

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, scans))
    else:
        results = [one(s) for s in scans]
    sets = [r for r in results if r is not None]
    rejected = [s.scan_id for s, r in zip(scans, results) if r is None]
    return sets, rejected


def match_scans(scans: list[ScanEvidence], sets: list[CandidateSet]) -> list[ScanEvidence]:
    by_id = {s.scan_id: s for s in scans}
    missing = [c.scan_id for c in sets if c.scan_id not in by_id]
    if missing:
        raise BadInput(f"candidates reference unknown scans: {', '.join(missing)}")
    return [by_id[c.scan_id] for c in sets]


@dataclass
class Solution:
    placements: dict[str, Placement]
    result: solver.SolveResult
    report: dict


def solve_candidates(ctx: FloorplanContext, scans: list[ScanEvidence], sets: list[CandidateSet],
                     weights: PotentialWeights, switches: Switches,
                     params: SolverParams = SolverParams()) -> Solution:
    scans = match_scans(scans, sets)
    model = solver.assemble_model(scans, sets, ctx, weights,
                                  switches.use_sf, switches.use_ss, switches.use_cov)
    res = solver.solve(model, params.method, params.max_iters)
    chosen = solver.placements_of(sets, res.assignment)
    terms = solver.model_terms(scans, sets, ctx, weights, res.assignment,
                               switches.use_sf, switches.use_ss, switches.use_cov)
    n = len(scans)
    report = {
        "switches": switches.name,
        "total": res.energy,
        "lower_bound": res.lower_bound,
        "iterations": res.iterations,
        "terms": terms,
        "per_scan": res.energy / n,
        "per_scan_terms": {k: v / n for k, v in terms.items()},
        "scans": [{"scan_id": c.scan_id, "label": int(a), "unary": float(model.unary[i][a])}
                  for i, (c, a) in enumerate(zip(sets, res.assignment))],
    }
    return Solution({c.scan_id: p for c, p in zip(sets, chosen)}, res, report)


def placements_doc(sol: Solution, rejected: list[str]) -> dict:
    return {"placements": [{"scan_id": s, **p.to_dict()} for s, p in sol.placements.items()],
            "energy": sol.result.energy, "lower_bound": sol.result.lower_bound,
            "iterations": sol.result.iterations, "rejected": list(rejected)}


def load_placements(path: str | Path) -> tuple[dict[str, Placement], list[str]]:
    doc = json.loads(Path(path).read_text())
    return ({d["scan_id"]: Placement(int(d["k"]), int(d["tx"]), int(d["ty"])) for d in doc["placements"]},
            list(doc.get("rejected", [])))


# --- scoring -----------------------------------------------------------------------

def evaluate(placements: dict[str, Placement], gt: synth.GroundTruth,
             sets: list[CandidateSet] | None = None) -> dict:
    """Final error plus Top-1/Top-5 candidate miss rates; unplaced scans count as errors."""
    ids = list(gt.placements)
    if not ids:
        raise BadInput("ground truth lists no scans")
    tol = gt.tolerance_px
    wrong = [s not in placements or not synth.placement_correct(placements[s], gt.placements[s], tol)
             for s in ids]
    out = {"n_scans": len(ids), "error": float(np.mean(wrong))}
    if sets is not None:
        by_id = {c.scan_id: c for c in sets}
        ranks = []
        for s in ids:
            cs = by_id.get(s)
            hit = [r for r, p in enumerate(cs.placements if cs else [])
                   if synth.placement_correct(p, gt.placements[s], tol)]
            ranks.append(hit[0] if hit else None)
        out["top1_error"] = float(np.mean([r != 0 for r in ranks]))
        out["top5_error"] = float(np.mean([r is None or r >= 5 for r in ranks]))
    return out


def top1_placements(sets: list[CandidateSet]) -> dict[str, Placement]:
    return {c.scan_id: c.candidates[0][0] for c in sets}


# --- rendering -----------------------------------------------------------------------

def scan_color(i: int) -> tuple[int, int, int]:
    """Deterministic, well-spread hue per scan index."""
    import colorsys
    h = (i * 0.618033988749895) % 1.0
    r, g, b = colorsys.hsv_to_rgb(h, 0.75, 0.95)
    return int(r * 255), int(g * 255), int(b * 255)


def render_overlay(clean: np.ndarray, scans: list[ScanEvidence], placements: list[Placement],
                   alpha: float = 0.5) -> np.ndarray:
    """RGB floorplan with each placed free-space mask tinted; overlaps go to the nearest origin."""
    h, w = clean.shape
    base = np.repeat((np.clip(clean, 0, 1) * 255)[..., None], 3, axis=2)
    owner = np.full(h * w, -1, dtype=np.int64)
    best = np.full(h * w, np.inf)
    yy, xx = np.divmod(np.arange(h * w), w)
    for i, (scan, pl) in enumerate(zip(scans, placements)):
        idx = energy.placed_free_space(scan, pl, (h, w))
        d = (xx[idx] - pl.tx) ** 2 + (yy[idx] - pl.ty) ** 2
        closer = d < best[idx]  # strict: earlier scans win ties
        owner[idx[closer]] = i
        best[idx[closer]] = d[closer]
    out = base.reshape(-1, 3).copy()
    palette = np.array([scan_color(i) for i in range(len(scans))], dtype=np.float64).reshape(-1, 3)
    hit = owner >= 0
    out[hit] = (1 - alpha) * out[hit] + alpha * palette[owner[hit]]
    return np.round(out).astype(np.uint8).reshape(h, w, 3)


def save_rgb(path: str | Path, rgb: np.ndarray) -> None:
    from PIL import Image
    Image.fromarray(rgb).save(path)


# --- benchmark -----------------------------------------------------------------------

@dataclass
class BenchRow:
    seed: int
    metric: str
    value: float


def bench_scene(spec: synth.SceneSpec, kinds=("ours",), ablations=tuple(ABLATIONS),
                weights: PotentialWeights = PotentialWeights(), threads: int = 1) -> list[BenchRow]:
    scene = synth.gen_scene(spec)
    ctx = floorplan.make_context(scene.floorplan, scene.config)
    rows = []
    ours = None
    for kind in kinds:
        params = SearchParams(kind=kind, weights=weights)
        sets, _ = search_all(ctx, scene.scans, params, threads)
        ev = evaluate(top1_placements(sets), scene.gt, sets)
        rows += [BenchRow(spec.seed, f"top1_error[{kind}]", ev["top1_error"]),
                 BenchRow(spec.seed, f"top5_error[{kind}]", ev["top5_error"])]
        if kind == "ours":
            ours = sets
    if ours is None and ablations:
        ours, _ = search_all(ctx, scene.scans, SearchParams(weights=weights), threads)
    for name in ablations:
        sol = solve_candidates(ctx, scene.scans, ours, weights, Switches.named(name))
        ev = evaluate(sol.placements, scene.gt)
        order = [c.scan_id for c in ours]
        stack = synth.stacking_count([sol.placements[s] for s in order], scene.room_labels)
        rows += [BenchRow(spec.seed, f"error[{name}]", ev["error"]),
                 BenchRow(spec.seed, f"stacking[{name}]", float(stack))]
    return rows


def summarize(rows: list[BenchRow]) -> dict[str, tuple[float, float, int]]:
    """metric -> (mean, std, n) over seeds, metrics in first-seen order."""
    groups: dict[str, list[float]] = {}
    for r in rows:
        groups.setdefault(r.metric, []).append(r.value)
    return {m: (float(np.mean(v)), float(np.std(v)), len(v)) for m, v in groups.items()}


def format_table(summary: dict[str, tuple[float, float, int]]) -> str:
    width = max([len("metric")] + [len(m) for m in summary])
    lines = [f"{'metric':<{width}}  {'mean':>8}  {'std':>8}  {'n':>4}"]
    lines += [f"{m:<{width}}  {mu:8.4f}  {sd:8.4f}  {n:4d}" for m, (mu, sd, n) in summary.items()]
    return "\n".join(lines)


def write_rows_csv(path: str | Path, rows: list[BenchRow]) -> None:
    import csv
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow([fl.name for fl in fields(BenchRow)])
        for r in rows:
            wr.writerow([r.seed, r.metric, repr(r.value)])


def with_doors_from_scene(ctx: FloorplanContext, scene: synth.Scene) -> FloorplanContext:
    """Context whose door layer is the scene's drawn door marks (fixtures only)."""
    if scene.door_marks is None:
        return ctx
    return replace(ctx, doors=scene.door_marks & ctx.building)
