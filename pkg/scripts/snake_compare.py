"""Snake: fixed-source vs biased MG at desk scale, with gamma and return plots.

    python scripts/snake_compare.py --seeds 0,1,2 -s network.conv_channels=8,8 -s network.hidden=32 -s run.budget=2000
"""
import argparse
from pathlib import Path

from selftune.config import build_preset, with_overrides
from selftune.runner import emit_plot, output_root, summarize, sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("-s", "--set", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]
    aggregates, labels = [], []
    for source in ("fixed", "biased"):
        cfg = with_overrides(build_preset(f"snake.mg.{source}"), args.set)
        res = sweep(cfg, seeds, jobs=args.jobs)
        for seed, r in res.results.items():
            s = summarize(r, frac=1 / 3)
            print(f"{source} seed {seed}: final-third gamma {s['gamma']:.4f} return {s['return']:.4f}")
        if res.aggregate_path:
            aggregates.append(res.aggregate_path)
            labels.append(cfg.run_name())
    for quantity in ("gamma", "return"):
        print(emit_plot(aggregates, quantity, Path(output_root()) / "plots" / f"snake_{quantity}.svg", labels=labels))


if __name__ == "__main__":
    main()
