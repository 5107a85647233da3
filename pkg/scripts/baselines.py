"""Top-1/Top-5 candidate error of the SSD and distance-transform baselines next to the full unary."""

import argparse

import numpy as np

from fpalign import floorplan, synth
from fpalign.energy import UNARY_KINDS
from fpalign.pipeline import evaluate, search_all, top1_placements
from fpalign.search import SearchParams


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--rooms", type=int, default=20)
    ap.add_argument("--kinds", default=",".join(UNARY_KINDS))
    args = ap.parse_args()
    kinds = args.kinds.split(",")
    top1 = {k: [] for k in kinds}
    top5 = {k: [] for k in kinds}
    for seed in range(args.seeds):
        scene = synth.gen_scene(synth.SceneSpec(seed=seed, rooms=args.rooms))
        ctx = floorplan.make_context(scene.floorplan, scene.config)
        for kind in kinds:
            sets, _ = search_all(ctx, scene.scans, SearchParams(kind=kind))
            ev = evaluate(top1_placements(sets), scene.gt, sets)
            top1[kind].append(ev["top1_error"])
            top5[kind].append(ev["top5_error"])
        print(f"seed {seed}: " + "  ".join(f"{k} {top1[k][-1]:.2f}" for k in kinds), flush=True)
    width = max(map(len, kinds))
    print(f"{'unary':<{width}}  top1    top5")
    for k in kinds:
        print(f"{k:<{width}}  {np.mean(top1[k]):.3f}  {np.mean(top5[k]):.3f}")


if __name__ == "__main__":
    main()
