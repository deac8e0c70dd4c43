"""Acceptance criteria 1-9, one test each; every test reports a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are repeated in the
terminal summary. The training criteria (2, 3, 4, 8) run the real experiments
and take a few hours in total on one core.
"""
import functools
import time

import numpy as np
import pytest

from helpers import report
from selftune.agent import AgentParams, gae_advantages, init_params, outer_critic_td_loss, policy_probs
from selftune.autodiff.tape import Tape
from selftune.config import build_preset, dumps, with_overrides
from selftune.diagnostics import (
    bmg_pipeline,
    finite_diff_meta_gradient,
    mg_pipeline,
    oracle_consistency_check,
    oracle_resolves,
    random_policies,
    rel_err,
)
from selftune.envs import init_rollout, rollout_batch
from selftune.meta import OptimizerState, bmg_meta_gradient, mg_meta_gradient, optimizer_step
from selftune.runner import run_experiment
from test_config import DC_TABLE, SNAKE_TABLE

DC_SEEDS = tuple(range(10))
SNAKE_SEEDS = (0, 1, 2)
# network width is not fixed by the hyperparameter table; this width and budget
# keep each Snake run inside the 30 minute target on one core
SNAKE_OVERRIDES = ("network.conv_channels=8,8", "network.hidden=32", "run.budget=2000")


@functools.lru_cache(maxsize=None)
def dc_run(algorithm: str, source: str, seed: int, normalize: bool = False):
    cfg = build_preset(f"discounting-chain.{algorithm}.{source}")
    if normalize:
        cfg = with_overrides(cfg, ["meta.normalize=true"])
    return run_experiment(cfg, seed)


@functools.lru_cache(maxsize=None)
def snake_run(source: str, seed: int):
    return run_experiment(with_overrides(build_preset(f"snake.mg.{source}"), SNAKE_OVERRIDES), seed)


def tail(rows, name: str, frac: float) -> np.ndarray:
    k = max(1, int(round(len(rows) * frac)))
    return np.array([getattr(r, name) for r in rows[-k:]], dtype=float)


# 1 --------------------------------------------------------------------------------

def test_criterion_1_meta_gradient_exactness():
    # configurations whose slope sits below the f64 resolution of the
    # epsilon = 1e-6 central difference cannot test anything; the resolution is
    # measured per draw from the pipeline alone and such draws are redrawn
    start = time.perf_counter()
    cfg0 = build_preset("discounting-chain.mg.fixed")
    spec = cfg0.network_spec()
    rng = np.random.default_rng(0)
    worst = {"mg": 0.0, "bmg": 0.0}
    checked = {"mg": 0, "bmg": 0}
    redrawn = {"mg": 0, "bmg": 0}
    draw = 0
    while min(checked.values()) < 100:
        mcfg = with_overrides(cfg0, [f"meta.outer_source={('fixed', 'biased')[draw % 2]}"]).meta_config()
        draw += 1
        params = init_params(spec, rng).map(lambda v: v + rng.normal(size=v.shape))
        z = float(rng.normal(scale=2.0))
        state = init_rollout("discounting-chain", 4, int(rng.integers(2**31)))
        pol = lambda o: policy_probs(params.policy, o, spec)
        inner, state = rollout_batch(pol, 100, state)
        outer, _ = rollout_batch(pol, 100, state)
        opt = cfg0.inner_optimizer()
        for alg in ("mg", "bmg"):
            if checked[alg] == 100:
                continue
            if alg == "mg":
                res = mg_meta_gradient(params, z, inner, outer, mcfg, opt)
                pipe = mg_pipeline(params, inner, outer, mcfg, opt, z)
            else:
                res = bmg_meta_gradient(params, z, inner, outer, mcfg, opt)
                pipe = bmg_pipeline(params, inner, outer, res.logs["target"], mcfg, opt, z)
            if not oracle_resolves(pipe, z):
                redrawn[alg] += 1
                continue
            checked[alg] += 1
            worst[alg] = max(worst[alg], rel_err(res.meta_grad, finite_diff_meta_gradient(pipe, z)))
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) < 1e-5 and elapsed < 60
    report(1, ok, f"100 draws each, max rel err MG {worst['mg']:.1e} BMG {worst['bmg']:.1e} "
                  f"(redrawn below oracle resolution: MG {redrawn['mg']}, BMG {redrawn['bmg']}), {elapsed:.0f}s")
    assert ok


# 2 --------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_2_dc_failure_and_fix():
    lines, ok = [], True
    for algorithm in ("mg", "bmg"):
        for source in ("biased", "fixed"):
            passed = 0
            for seed in DC_SEEDS:
                res = dc_run(algorithm, source, seed)
                ret = float(np.nanmean(tail(res.rows, "mean_return", 0.1)))
                if source == "biased":
                    passed += res.final_gamma < 0.95 and ret <= 1.02
                else:
                    passed += res.final_gamma > 0.99 and ret >= 1.09
            ok &= passed >= 9
            lines.append(f"{algorithm}-{source} {passed}/10")
    report(2, ok, ", ".join(lines))
    assert ok


# 3 --------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_3_advantage_centering():
    fixed_ok = biased_ok = 0
    fixed_means, biased_means = [], []
    for seed in DC_SEEDS:
        f = tail(dc_run("mg", "fixed", seed).rows, "advantage_mean", 0.1)
        fixed_means.append(f.mean())
        fixed_ok += abs(f.mean()) < 0.05
        b = tail(dc_run("mg", "biased", seed).rows, "advantage_mean", 0.1)
        biased_means.append(b.mean())
        biased_ok += abs(b.mean()) > 0.05 and (np.all(b > 0) or np.all(b < 0))
    ok = fixed_ok >= 9 and biased_ok >= 9
    report(3, ok, f"fixed centered {fixed_ok}/10 (max |mean| {np.max(np.abs(fixed_means)):.1e}), "
                  f"biased off-center {biased_ok}/10 (max |mean| {np.max(np.abs(biased_means)):.1e})")
    assert ok


# 4 --------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_4_normalization_does_not_fix_bias():
    details, any_seed, centered = [], False, True
    for seed in DC_SEEDS[:3]:
        res = dc_run("mg", "biased", seed, normalize=True)
        worst = max(abs(r.advantage_mean) for r in res.rows)
        centered &= worst < 1e-10
        ret = float(np.nanmean(tail(res.rows, "mean_return", 0.1)))
        hit = res.final_gamma < 0.95 and ret <= 1.02
        details.append(f"seed {seed} gamma {res.final_gamma:.4f} return {ret:.4f} max|adv mean| {worst:.0e}")
        if hit:
            any_seed = True
            break
    ok = centered and any_seed
    report(4, ok, "; ".join(details))
    assert ok


# 5 --------------------------------------------------------------------------------

def test_criterion_5_oracle_equivalence():
    rng = np.random.default_rng(5)
    rep = oracle_consistency_check(random_policies(rng, 1000), rng.uniform(0.0, 1.0, 1000))
    ok = rep.n == 1000 and rep.max_abs_discrepancy < 1e-12
    report(5, ok, f"{rep.n} pairs, max |diff| {rep.max_abs_discrepancy:.1e}")
    assert ok


# 6 --------------------------------------------------------------------------------

def test_criterion_6_gae_identities():
    rng = np.random.default_rng(6)
    worst = 0.0
    for t in (1, 2, 7, 50, 100):
        r, v, boot = rng.normal(size=(4, t)), rng.normal(size=(4, t)), rng.normal(size=4)
        d = rng.random((4, t)) < 0.1
        gamma = float(rng.uniform(0.5, 1.0))
        cont = 1.0 - d
        vn = np.concatenate([v[:, 1:], boot[:, None]], 1)
        td = r + gamma * cont * vn - v
        worst = max(worst, np.max(np.abs(gae_advantages(r, v, boot, d, gamma, 0.0)[0].val - td)))
        ret = np.zeros_like(r)
        acc = boot.copy()
        for s in reversed(range(t)):
            acc = r[:, s] + gamma * cont[:, s] * acc
            ret[:, s] = acc
        worst = max(worst, np.max(np.abs(gae_advantages(r, v, boot, d, gamma, 1.0)[0].val - (ret - v))))
    ok = worst < 1e-12
    report(6, ok, f"max |diff| {worst:.1e} over T up to 100")
    assert ok


# 7 --------------------------------------------------------------------------------

def test_criterion_7_gradient_stop():
    rng = np.random.default_rng(7)
    leaked, outer_moved = 0.0, True
    for k in range(5):
        cfg = with_overrides(build_preset("snake.mg.fixed"),
                             [f"network.conv_channels={rng.integers(1, 5)},{rng.integers(1, 5)}",
                              f"network.hidden={rng.integers(2, 17)}"])
        spec = cfg.network_spec()
        params = init_params(spec, rng).map(lambda v: v + 0.3 * rng.normal(size=v.shape))
        batch, _ = rollout_batch(lambda o: np.full((len(o), 4), 0.25), 5, init_rollout("snake-6x6", 3, k))
        tape = Tape()
        leaves = AgentParams.from_flat(tape.watch_tree(params.flat()))
        grads = tape.gradient(outer_critic_td_loss(leaves, batch, 1.0, spec), leaves.flat())
        for name, g in grads.items():
            if name.startswith(("torso/", "policy/")):
                leaked = max(leaked, float(np.max(np.abs(g.val))))
        outer_moved &= bool(np.any(grads["outer_head/w"].val != 0.0))
    ok = leaked == 0.0 and outer_moved
    report(7, ok, f"max |grad| on torso and policy {leaked:.1e}, outer head gradient nonzero: {outer_moved}")
    assert ok


# 8 --------------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_8_snake_ordering():
    g = {s: np.mean([tail(snake_run(s, seed).rows, "gamma", 1 / 3).mean() for seed in SNAKE_SEEDS])
         for s in ("fixed", "biased")}
    ret = {s: np.mean([np.nanmean(tail(snake_run(s, seed).rows, "mean_return", 1 / 3)) for seed in SNAKE_SEEDS])
           for s in ("fixed", "biased")}
    ok = g["fixed"] > g["biased"] and ret["fixed"] >= ret["biased"]
    report(8, ok, f"final-third gamma fixed {g['fixed']:.4f} vs biased {g['biased']:.4f}, "
                  f"return fixed {ret['fixed']:.4f} vs biased {ret['biased']:.4f}")
    assert ok


# 9 --------------------------------------------------------------------------------

def test_criterion_9_optimizers_and_table():
    # f(x) = 3/2 (x - 0.5)^2 at x = 2, gradient 4.5
    x, g = {"x": np.float64(2.0)}, {"x": np.float64(4.5)}
    adam = float(optimizer_step(OptimizerState("adam", 0.1), x, g)[0]["x"].val)
    rms = float(optimizer_step(OptimizerState("rmsprop", 0.01), x, g)[0]["x"].val)
    err = max(abs(adam - 1.9000000002222222217), abs(rms - 1.9000000024691357110))
    missing = []
    for name, table in (("discounting-chain.mg.fixed", DC_TABLE), ("snake.mg.fixed", SNAKE_TABLE)):
        lines = set(dumps(build_preset(name)).splitlines())
        missing += [f"{name}:{k}" for k, v in table.items() if f"{k} = {v}" not in lines]
    ok = err < 1e-12 and not missing
    report(9, ok, f"optimizer step error {err:.1e}, table values missing: {missing or 'none'}")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
