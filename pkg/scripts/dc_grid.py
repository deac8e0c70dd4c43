"""Discounting Chain grid: MG/BMG x biased/fixed, plus the normalized biased run.

Writes per-cell sweeps under the output root and SVG plots of gamma, return
and mean outer advantage across cells.

    python scripts/dc_grid.py --seeds 0,1,2 --jobs 1
"""
import argparse
from pathlib import Path

from selftune.config import build_preset, with_overrides
from selftune.runner import emit_plot, output_root, sweep

CELLS = [
    ("discounting-chain.mg.biased", []),
    ("discounting-chain.mg.fixed", []),
    ("discounting-chain.bmg.biased", []),
    ("discounting-chain.bmg.fixed", []),
    ("discounting-chain.mg.biased", ["meta.normalize=true"]),
]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", default="0,1,2,3,4,5,6,7,8,9")
    ap.add_argument("--budget", type=int)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]
    aggregates, labels = [], []
    for name, extra in CELLS:
        cfg = with_overrides(build_preset(name), extra + ([f"run.budget={args.budget}"] if args.budget else []))
        res = sweep(cfg, seeds, jobs=args.jobs)
        for seed, r in res.results.items():
            print(f"{cfg.run_name()} seed {seed}: gamma {r.initial_gamma:.3f} -> {r.final_gamma:.5f}")
        if res.aggregate_path:
            aggregates.append(res.aggregate_path)
            labels.append(cfg.run_name())
    plots = output_root() / "plots"
    for quantity in ("gamma", "return", "advantage_mean"):
        print(emit_plot(aggregates, quantity, Path(plots) / f"dc_{quantity}.svg", labels=labels))


if __name__ == "__main__":
    main()
