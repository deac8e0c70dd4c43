"""Command line entry point: run, sweep, plot, check-metagrad, dump-config."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from selftune.config import PRESET_NAMES, dumps, resolve, validate, with_overrides
from selftune.errors import ConfigError, NumericalError, SchemaError, SelfTuneError

# exit codes by failure category
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_SCHEMA, EXIT_RUNTIME, EXIT_CHECK = 0, 2, 3, 4, 5, 6


def _config(args):
    cfg = resolve(args.config)
    return validate(with_overrides(cfg, args.set or []))


def cmd_run(args) -> int:
    from selftune.runner import output_root, run_experiment, summarize

    cfg = _config(args)
    seed = args.seed if args.seed is not None else cfg.run.seeds[0]
    out = Path(args.out) if args.out else output_root(cfg) / cfg.run_name()
    out.mkdir(parents=True, exist_ok=True)
    (out / "config").write_text(dumps(cfg))
    res = run_experiment(cfg, seed, out)
    s = summarize(res)
    print(f"{cfg.run_name()} seed {seed}: gamma {res.initial_gamma:.4f} -> {res.final_gamma:.6f}, "
          f"tail return {s['return']:.4f}, metrics {res.metrics_path}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from selftune.runner import sweep

    cfg = _config(args)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else list(cfg.run.seeds)
    res = sweep(cfg, seeds, args.out, jobs=args.jobs)
    for s, r in res.results.items():
        print(f"seed {s}: final gamma {r.final_gamma:.6f}")
    for s, msg in res.failures.items():
        print(f"seed {s}: FAILED {msg}", file=sys.stderr)
    print(f"aggregate: {res.aggregate_path}")
    return EXIT_RUNTIME if res.failures else EXIT_OK


def cmd_plot(args) -> int:
    from selftune.runner import emit_plot

    out = emit_plot(args.aggregates, args.quantity, args.out, labels=args.labels)
    print(out)
    return EXIT_OK


def cmd_check_metagrad(args) -> int:
    """Compare analytic and finite-difference meta-gradients on random draws.

    Draws whose slope is below the measured resolution of the difference
    quotient are reported and redrawn (at most ten attempts per requested draw).
    """
    from selftune.agent.networks import init_params, policy_probs
    from selftune.diagnostics import bmg_pipeline, finite_diff_meta_gradient, mg_pipeline, oracle_resolves, rel_err
    from selftune.envs.rollout import init_rollout, rollout_batch
    from selftune.meta.engine import meta_gradient

    cfg = _config(args)
    mcfg = cfg.meta_config()
    spec = mcfg.spec
    rng = np.random.default_rng(args.seed)
    worst, checked, attempts = 0.0, 0, 0
    kwargs = {} if cfg.is_chain else {"time_limit": cfg.env.time_limit}
    while checked < args.draws and attempts < 10 * args.draws:
        attempts += 1
        params = init_params(spec, rng).map(lambda v: v + args.scale * rng.normal(size=np.shape(v)))
        z = float(rng.normal(scale=2.0))
        state = init_rollout(cfg.env.id, args.batch_size, int(rng.integers(2**31)), **kwargs)
        pol = lambda o, p=params: policy_probs(p.policy, o, spec)
        inner, state = rollout_batch(pol, cfg.run.seq_len, state)
        outer, _ = rollout_batch(pol, cfg.run.seq_len, state)
        opt = cfg.inner_optimizer()
        res = meta_gradient(cfg.meta.algorithm, params, z, inner, outer, mcfg, opt)
        if cfg.meta.algorithm == "mg":
            pipe = mg_pipeline(params, inner, outer, mcfg, opt, z)
        else:
            pipe = bmg_pipeline(params, inner, outer, res.logs["target"], mcfg, opt, z)
        if not oracle_resolves(pipe, z, args.epsilon, args.tol):
            print(f"draw {attempts - 1}: analytic {res.meta_grad:+.10e} below finite-difference resolution, redrawn")
            continue
        fd = finite_diff_meta_gradient(pipe, z, args.epsilon)
        err = rel_err(res.meta_grad, fd)
        worst = max(worst, err)
        checked += 1
        print(f"draw {attempts - 1}: analytic {res.meta_grad:+.10e} fd {fd:+.10e} rel {err:.2e}")
    ok = checked == args.draws and worst < args.tol
    print(f"{checked} draws checked, max relative error {worst:.3e} ({'PASS' if ok else 'FAIL'} at {args.tol:g})")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_dump_config(args) -> int:
    text = dumps(_config(args))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="selftune", description="Self-tuned discount meta-gradient experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("config", help=f"preset ({', '.join(PRESET_NAMES)}) or config file")
        sp.add_argument("-s", "--set", action="append", metavar="KEY=VALUE", help="override a config key")
        return sp

    sp = with_config(sub.add_parser("run", help="train one seed"))
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_run)

    sp = with_config(sub.add_parser("sweep", help="train several seeds and aggregate"))
    sp.add_argument("--seeds", help="comma separated; default run.seeds")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_sweep)

    sp = sub.add_parser("plot", help="SVG of an aggregated quantity")
    sp.add_argument("aggregates", nargs="+")
    sp.add_argument("--quantity", choices=("return", "gamma", "advantage_mean"), default="gamma")
    sp.add_argument("--labels", nargs="*")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_plot)

    sp = with_config(sub.add_parser("check-metagrad", help="finite-difference check of the meta-gradient"))
    sp.add_argument("--draws", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--batch-size", type=int, default=8)
    sp.add_argument("--scale", type=float, default=0.5, help="parameter perturbation scale")
    sp.add_argument("--epsilon", type=float, default=1e-6)
    sp.add_argument("--tol", type=float, default=1e-5)
    sp.set_defaults(fn=cmd_check_metagrad)

    sp = with_config(sub.add_parser("dump-config", help="print the resolved config"))
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_dump_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except SelfTuneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
