"""Command-line entry point: ``fpalign <subcommand>``.

Exit codes: 0 success, 1 internal error, 2 bad input or config.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import search, synth
from .pipeline import (ABLATIONS, BadInput, PipelineConfig, Switches, bench_scene, candidates_path,
                       evaluate, format_table, load_inputs, load_placements, placements_doc,
                       preprocess, render_overlay, save_rgb, search_all, solve_candidates,
                       summarize, top1_placements, write_rows_csv)
from .energy import UNARY_KINDS

log = logging.getLogger("fpalign")


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    if getattr(args, "floorplan", None):
        cfg.floorplan_path = Path(args.floorplan)
    if getattr(args, "scans", None):
        cfg.scans_dir = Path(args.scans)
    if getattr(args, "out", None):
        cfg.out_dir = Path(args.out)
    return cfg


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2))


def cmd_preprocess(args) -> int:
    cfg = _config(args)
    did, ctx, scans = preprocess(cfg, force=args.force)
    state = "wrote" if did else "up to date:"
    print(f"{state} context {ctx.shape[1]}x{ctx.shape[0]} px at {ctx.meters_per_pixel:.4g} m/px, "
          f"{len(scans)} evidence packs in {cfg.out_dir}")
    return 0


def cmd_candidates(args) -> int:
    cfg = _config(args)
    kind = args.kind or cfg.search.kind
    ctx, scans = load_inputs(cfg.out_dir)
    sets, rejected = search_all(ctx, scans, replace(cfg.search, kind=kind), args.threads)
    path = candidates_path(cfg.out_dir, kind)
    search.save_candidates(path, sets, rejected)
    print(f"{len(sets)} candidate sets, {len(rejected)} rejected -> {path}")
    return 0


def cmd_solve(args) -> int:
    cfg = _config(args)
    sw = Switches.named(args.ablation) if args.ablation else cfg.switches
    ctx, scans = load_inputs(cfg.out_dir)
    cpath = candidates_path(cfg.out_dir)
    if not cpath.is_file():
        raise BadInput(f"{cpath} missing; run candidates first")
    sets, rejected = search.load_candidates(cpath)
    if not sets:
        raise BadInput("no placeable scans")
    sol = solve_candidates(ctx, scans, sets, cfg.weights, sw, cfg.solver)
    _write_json(cfg.out_dir / "placements.json", placements_doc(sol, rejected))
    _write_json(cfg.out_dir / "energy_report.json", sol.report)
    print(f"{sw.name}: energy {sol.result.energy:.6f} (bound {sol.result.lower_bound:.6f}), "
          f"{sol.report['per_scan']:.4f} per scan -> {cfg.out_dir / 'placements.json'}")
    return 0


def cmd_render(args) -> int:
    cfg = _config(args)
    ctx, scans = load_inputs(cfg.out_dir)
    ppath = Path(args.placements) if args.placements else cfg.out_dir / "placements.json"
    if not ppath.is_file():
        raise BadInput(f"{ppath} missing; run solve first")
    placed, _ = load_placements(ppath)
    by_id = {s.scan_id: s for s in scans}
    unknown = [s for s in placed if s not in by_id]
    if unknown:
        raise BadInput(f"placements reference unknown scans: {', '.join(unknown)}")
    ids = [s for s in by_id if s in placed]
    rgb = render_overlay(ctx.clean, [by_id[s] for s in ids], [placed[s] for s in ids])
    out = Path(args.image) if args.image else cfg.out_dir / "render.png"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_rgb(out, rgb)
    print(f"rendered {len(ids)} scans -> {out}")
    return 0


def _scene_spec(args, seed: int) -> synth.SceneSpec:
    kw = {"seed": seed, "rooms": args.rooms, "duplicate_rooms": args.duplicate_rooms,
          "clutter_density": args.clutter, "dropout": args.dropout}
    if args.canvas:
        kw["canvas"] = args.canvas
    try:
        return synth.SceneSpec(**kw)
    except ValueError as exc:
        raise BadInput(str(exc)) from exc


def cmd_synth(args) -> int:
    spec = _scene_spec(args, args.seed)
    scene = synth.gen_scene(spec)
    synth.save_scene(scene, args.out, spec)
    print(f"scene seed {spec.seed}: {len(scene.scans)} scans, floorplan "
          f"{scene.floorplan.shape[1]}x{scene.floorplan.shape[0]} px -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    gt_path = Path(args.gt)
    if not gt_path.is_file():
        raise BadInput(f"ground truth not found: {gt_path}")
    gt = synth.load_gt(gt_path)
    placed = {}
    if args.placements:
        if not Path(args.placements).is_file():
            raise BadInput(f"placements not found: {args.placements}")
        placed, _ = load_placements(args.placements)
    sets = None
    if args.candidates:
        if not Path(args.candidates).is_file():
            raise BadInput(f"candidates not found: {args.candidates}")
        sets, _ = search.load_candidates(args.candidates)
        if not args.placements:
            placed = top1_placements(sets)
    if not args.placements and sets is None:
        raise BadInput("give --placements and/or --candidates")
    metrics = evaluate(placed, gt, sets)
    if args.csv:
        Path(args.csv).write_text("metric,value\n" + "".join(f"{k},{v!r}\n" for k, v in metrics.items()))
    width = max(len(k) for k in metrics)
    for k, v in metrics.items():
        print(f"{k:<{width}}  {v:.4f}" if isinstance(v, float) else f"{k:<{width}}  {v}")
    return 0


def cmd_bench(args) -> int:
    kinds = args.kinds.split(",") if args.kinds else ["ours"]
    ablations = args.ablations.split(",") if args.ablations else list(ABLATIONS)
    bad = [k for k in kinds if k not in UNARY_KINDS] + [a for a in ablations if a not in ABLATIONS]
    if bad:
        raise BadInput(f"unknown unary kinds or ablations: {', '.join(bad)}")
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    rows = []
    for seed in range(args.seed, args.seed + args.seeds):
        rows += bench_scene(_scene_spec(args, seed), kinds, ablations, cfg.weights, args.threads)
        log.info("seed %d done", seed)
    table = format_table(summarize(rows))
    if args.csv:
        write_rows_csv(args.csv, rows)
    print(table)
    return 0


def cmd_baseline(args) -> int:
    cfg = _config(args)
    ctx, scans = load_inputs(cfg.out_dir)
    kind = args.kind or cfg.baseline
    sets, rejected = search_all(ctx, scans, replace(cfg.search, kind=kind), args.threads)
    path = candidates_path(cfg.out_dir, kind)
    search.save_candidates(path, sets, rejected)
    doc = {"kind": kind, "rejected": rejected,
           "placements": [{"scan_id": c.scan_id, **c.candidates[0][0].to_dict(),
                           "score": c.candidates[0][1]} for c in sets]}
    _write_json(cfg.out_dir / f"placements_{kind}.json", doc)
    print(f"{kind}: top-1 placements for {len(sets)} scans -> {cfg.out_dir / f'placements_{kind}.json'}")
    return 0


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommand copies must not reset values given before the subcommand
    def d(v):
        return argparse.SUPPRESS if suppress else v

    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--config", default=d(None), help="pipeline config JSON (paths resolve next to it)")
    g.add_argument("--threads", type=int, default=d(1), help="worker threads for candidate search")
    g.add_argument("--force", action="store_true", default=d(False), help="redo up-to-date preprocessing")
    g.add_argument("--seed", type=int, default=d(0), help="scene seed (synth, bench)")
    g.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return g


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)

    paths = argparse.ArgumentParser(add_help=False)
    paths.add_argument("--floorplan", help="floorplan image (overrides config)")
    paths.add_argument("--scans", help="directory of *.ply clouds or evidence packs")
    paths.add_argument("--out", help="run directory")

    scene = argparse.ArgumentParser(add_help=False)
    scene.add_argument("--rooms", type=int, default=20)
    scene.add_argument("--duplicate-rooms", type=int, default=0)
    scene.add_argument("--clutter", type=float, default=0.05)
    scene.add_argument("--dropout", type=float, default=0.1)
    scene.add_argument("--canvas", type=int, default=0, help="square canvas side in px")

    p = argparse.ArgumentParser(prog="fpalign", parents=[_global_flags(suppress=False)],
                                description="Place indoor scans on a floorplan image.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("preprocess", parents=[common, paths], help="floorplan context and scan evidence")
    s.set_defaults(func=cmd_preprocess)
    s = sub.add_parser("candidates", parents=[common, paths], help="per-scan candidate placements")
    s.add_argument("--kind", choices=UNARY_KINDS, help="unary used by the search")
    s.set_defaults(func=cmd_candidates)
    s = sub.add_parser("solve", parents=[common, paths], help="joint placement over candidates")
    s.add_argument("--ablation", choices=list(ABLATIONS), help="potentials to use")
    s.set_defaults(func=cmd_solve)
    s = sub.add_parser("render", parents=[common, paths], help="colored placement overlay")
    s.add_argument("--placements", help="placements.json (default: run directory)")
    s.add_argument("--image", help="output PNG (default: run/render.png)")
    s.set_defaults(func=cmd_render)
    s = sub.add_parser("synth", parents=[common, scene], help="write a synthetic scene directory")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)
    s = sub.add_parser("eval", parents=[common], help="score placements against ground truth")
    s.add_argument("--gt", required=True)
    s.add_argument("--placements")
    s.add_argument("--candidates")
    s.add_argument("--csv")
    s.set_defaults(func=cmd_eval)
    s = sub.add_parser("bench", parents=[common, scene], help="seeded synthetic benchmark")
    s.add_argument("--seeds", type=int, default=10, help="number of consecutive seeds from --seed")
    s.add_argument("--kinds", help=f"comma list of unary kinds ({','.join(UNARY_KINDS)})")
    s.add_argument("--ablations", help=f"comma list of ablations ({','.join(ABLATIONS)})")
    s.add_argument("--csv")
    s.set_defaults(func=cmd_bench)
    s = sub.add_parser("baseline", parents=[common, paths], help="top-1 placements of a baseline unary")
    s.add_argument("--kind", choices=UNARY_KINDS)
    s.set_defaults(func=cmd_baseline)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    # user data problems surface as ValueError (bad rasters, configs, clouds)
    except (ValueError, FileNotFoundError, synth.GenerationFailed) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
