"""Training loop, metrics files, seed sweeps and plots."""
from __future__ import annotations

import csv
import io
import logging
import math
import os
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from selftune.agent.losses import outer_critic_td_loss
from selftune.agent.networks import AgentParams, init_params, policy_probs
from selftune.autodiff.tape import Tape
from selftune.config import ExperimentConfig, dumps, validate
from selftune.diagnostics import (
    advantage_stats,
    bmg_pipeline,
    finite_diff_meta_gradient,
    mg_pipeline,
)
from selftune.envs.rollout import init_rollout, rollout_batch
from selftune.errors import NumericalError, SchemaError, SelfTuneError
from selftune.meta.engine import meta_gradient
from selftune.meta.gamma import gamma_of_logit, logit_of_gamma
from selftune.meta.optim import meta_update, optimizer_step

log = logging.getLogger(__name__)

SCHEMA_VERSION = "selftune-metrics v1"
COLUMNS = ("meta_update", "env_steps", "mean_return", "gamma", "meta_grad", "meta_grad_fd",
           "advantage_mean", "advantage_std")
AGG_SCHEMA = "selftune-aggregate v1"
OUTPUT_ENV = "SELFTUNE_OUTPUT_ROOT"
QUANTITIES = {"return": "mean_return", "gamma": "gamma", "advantage_mean": "advantage_mean"}


@dataclass
class MetricsRow:
    meta_update: int
    env_steps: int
    mean_return: float
    gamma: float
    meta_grad: float
    meta_grad_fd: float
    advantage_mean: float
    advantage_std: float
    wall_clock: float = 0.0


@dataclass
class RunResult:
    seed: int
    rows: list
    initial_gamma: float
    final_gamma: float
    final_z: float
    params: AgentParams | None = None
    metrics_path: Path | None = None
    extras: dict = field(default_factory=dict)


def output_root(cfg: ExperimentConfig | None = None) -> Path:
    root = os.environ.get(OUTPUT_ENV)
    if root:
        return Path(root)
    return Path(cfg.run.output_dir if cfg is not None else "runs")


def _policy_fn(params: AgentParams, spec):
    policy = {k: np.asarray(v) for k, v in params.policy.items()}
    return lambda obs: policy_probs(policy, obs, spec)


def _outer_critic_step(params: AgentParams, batch, cfg: ExperimentConfig, state):
    """One TD update of the outer head only."""
    tape = Tape()
    flat = params.flat()
    keys = [k for k in flat if k.startswith("outer_head/")]
    watched = {k: (tape.watch(v) if k in keys else v) for k, v in flat.items()}
    loss = outer_critic_td_loss(AgentParams.from_flat(watched), batch, cfg.outer.gamma, cfg.network_spec(),
                                cfg.run.reduction)
    grads = tape.gradient(loss, {k: watched[k] for k in keys})
    new, state = optimizer_step(state, {k: flat[k] for k in keys}, grads)
    return AgentParams.from_flat({**flat, **{k: v.val for k, v in new.items()}}), state


def _fmt_cell(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_metrics(rows, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# {SCHEMA_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in rows:
            w.writerow([_fmt_cell(getattr(r, c)) for c in COLUMNS])
    return path


def read_table(path) -> dict:
    """Columns of a metrics or aggregate CSV as float arrays."""
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    if not lines:
        raise SchemaError(f"{path}: no header row")
    reader = csv.reader(io.StringIO("\n".join(lines)))
    header = next(reader)
    data = [row for row in reader if row]
    return {c: np.array([float(r[i]) for r in data]) for i, c in enumerate(header)}


def run_experiment(cfg: ExperimentConfig, seed: int, out_dir=None, keep_params: bool = False) -> RunResult:
    """Full meta-training loop for one seed; writes metrics when ``out_dir`` is given."""
    validate(cfg)
    spec = cfg.network_spec()
    mcfg = cfg.meta_config()
    init_seq, env_seq = np.random.SeedSequence(seed).spawn(2)
    params = init_params(spec, np.random.default_rng(init_seq))
    kwargs = {} if cfg.is_chain else {"time_limit": cfg.env.time_limit}
    rstate = init_rollout(cfg.env.id, cfg.run.batch_size, int(env_seq.generate_state(1)[0]), **kwargs)
    lo, hi = mcfg.bounds
    z = logit_of_gamma(cfg.inner.gamma_start, lo, hi)
    initial_gamma = float(gamma_of_logit(z, lo, hi).val)
    inner_state = cfg.inner_optimizer()
    meta_state = cfg.meta_optimizer()
    critic_state = cfg.critic_optimizer()
    per_batch = cfg.run.batch_size * cfg.run.seq_len
    rows = []
    t0 = time.perf_counter()
    for i in range(cfg.run.budget):
        try:
            inner_batch, rstate = rollout_batch(_policy_fn(params, spec), cfg.run.seq_len, rstate)
            holder = {}

            def collect(theta_prime, _rs=rstate):
                batch, holder["state"] = rollout_batch(_policy_fn(theta_prime, spec), cfg.run.seq_len, _rs)
                return batch

            res = meta_gradient(cfg.meta.algorithm, params, z, inner_batch, collect, mcfg, inner_state)
            rstate = holder["state"]
            fd = math.nan
            if cfg.run.fd_every and i % cfg.run.fd_every == 0:
                if cfg.meta.algorithm == "mg":
                    pipe = mg_pipeline(params, inner_batch, res.outer_batch, mcfg, inner_state, z)
                else:
                    pipe = bmg_pipeline(params, inner_batch, res.outer_batch, res.logs["target"], mcfg, inner_state, z)
                fd = finite_diff_meta_gradient(pipe, z)
            stats = advantage_stats(res.logs["outer_advantages"], "normalized" if mcfg.normalize else mcfg.outer_source)
            gamma_used = res.logs["gamma"]
            z, meta_state = meta_update(meta_state, z, res.meta_grad)
            params, inner_state = res.theta_prime, res.opt_state
            if not cfg.is_chain:
                params, critic_state = _outer_critic_step(params, res.outer_batch, cfg, critic_state)
        except NumericalError as exc:
            raise NumericalError(f"meta-update {i}: {exc}") from exc
        returns = np.concatenate([inner_batch.episode_returns, res.outer_batch.episode_returns])
        rows.append(MetricsRow(
            meta_update=i,
            env_steps=2 * per_batch * (i + 1),
            mean_return=float(returns.mean()) if returns.size else math.nan,
            gamma=gamma_used,
            meta_grad=res.meta_grad,
            meta_grad_fd=fd,
            advantage_mean=stats.mean,
            advantage_std=stats.std,
            wall_clock=time.perf_counter() - t0,
        ))
        if (i + 1) % max(1, cfg.run.budget // 10) == 0:
            log.info("seed %d update %d gamma %.5f return %.4f", seed, i + 1, rows[-1].gamma, rows[-1].mean_return)
    final_gamma = float(gamma_of_logit(z, lo, hi).val)
    result = RunResult(seed, rows, initial_gamma, final_gamma, z, params if keep_params else None)
    if out_dir is not None:
        out = Path(out_dir)
        result.metrics_path = write_metrics(rows, out / f"seed{seed}.csv")
        # wall-clock goes to a side file so the metrics stay byte-reproducible
        with open(out / f"seed{seed}.timing.csv", "w") as fh:
            fh.write("meta_update,wall_clock\n")
            fh.writelines(f"{r.meta_update},{r.wall_clock:.3f}\n" for r in rows)
        summary = {"seed": seed, "initial_gamma": initial_gamma, "final_gamma": final_gamma, "final_z": z,
                   "meta_updates": len(rows)}
        (out / f"seed{seed}.summary").write_text("".join(f"{k} = {v!r}\n" for k, v in summary.items()))
    return result


@dataclass
class SweepResult:
    out_dir: Path
    results: dict
    failures: dict
    aggregate_path: Path | None


def aggregate(tables: list) -> dict:
    """Mean and std (ddof 0) of every metric per meta-update across runs."""
    if not tables:
        raise SchemaError("nothing to aggregate")
    n = min(len(t["meta_update"]) for t in tables)
    out = {"meta_update": tables[0]["meta_update"][:n]}
    for c in COLUMNS[1:]:
        stack = np.stack([t[c][:n] for t in tables])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            out[f"{c}_mean"] = np.nanmean(stack, axis=0) if n else np.zeros(0)
            out[f"{c}_std"] = np.nanstd(stack, axis=0) if n else np.zeros(0)
    return out


def write_aggregate(agg: dict, path: Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(f"# {AGG_SCHEMA}\n")
        w = csv.writer(fh, lineterminator="\n")
        cols = list(agg)
        w.writerow(cols)
        for j in range(len(agg["meta_update"])):
            w.writerow([str(int(agg[c][j])) if c == "meta_update" else repr(float(agg[c][j])) for c in cols])
    return path


def sweep(cfg: ExperimentConfig, seeds, out_dir=None, jobs: int = 1) -> SweepResult:
    """Run each seed independently; a failing seed is recorded and the others continue."""
    seeds = list(seeds)
    if not seeds:
        raise SelfTuneError("sweep needs at least one seed")
    out = Path(out_dir) if out_dir is not None else output_root(cfg) / cfg.run_name()
    out.mkdir(parents=True, exist_ok=True)
    (out / "config").write_text(dumps(cfg))
    results, failures = {}, {}
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs) as pool:
            futs = {s: pool.submit(run_experiment, cfg, s, out) for s in dict.fromkeys(seeds)}
            for s, f in futs.items():
                try:
                    results[s] = f.result()
                except SelfTuneError as exc:
                    failures[s] = f"{type(exc).__name__}: {exc}"
    else:
        for s in dict.fromkeys(seeds):
            try:
                results[s] = run_experiment(cfg, s, out)
            except SelfTuneError as exc:
                failures[s] = f"{type(exc).__name__}: {exc}"
                log.error("seed %d failed: %s", s, failures[s])
    if failures:
        (out / "failures").write_text("".join(f"seed {s}: {m}\n" for s, m in failures.items()))
    agg_path = None
    if results:
        tables = [read_table(r.metrics_path) for r in results.values()]
        agg_path = write_aggregate(aggregate(tables), out / "aggregate.csv")
    return SweepResult(out, results, failures, agg_path)


def emit_plot(aggregates, quantity: str, out_path, labels=None) -> Path:
    """SVG line chart of one quantity: mean line and one-std band per aggregate file."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if quantity not in QUANTITIES:
        raise SchemaError(f"quantity must be one of {tuple(QUANTITIES)}")
    col = QUANTITIES[quantity]
    aggregates = [aggregates] if isinstance(aggregates, (str, Path)) else list(aggregates)
    if not aggregates:
        raise SchemaError("no aggregate files given")
    labels = labels or [Path(a).parent.name or Path(a).stem for a in aggregates]
    fig, ax = plt.subplots(figsize=(6, 4))
    for path, label in zip(aggregates, labels):
        table = read_table(path)
        for c in ("meta_update", f"{col}_mean", f"{col}_std"):
            if c not in table:
                raise SchemaError(f"{path}: missing column '{c}'")
        if len(table["meta_update"]) == 0:
            raise SchemaError(f"{path}: empty aggregate")
        x, m, s = table["meta_update"], table[f"{col}_mean"], table[f"{col}_std"]
        ax.plot(x, m, label=label, lw=1.2)
        ax.fill_between(x, m - s, m + s, alpha=0.25)
    ax.set_xlabel("meta-update")
    ax.set_ylabel(quantity)
    ax.legend(fontsize=8)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out_path


def summarize(result: RunResult, frac: float = 0.1) -> dict:
    """Tail averages over the last ``frac`` of training."""
    rows = result.rows
    k = max(1, int(round(len(rows) * frac))) if rows else 0
    tail = rows[-k:] if k else []

    def avg(name):
        vals = np.array([getattr(r, name) for r in tail], dtype=float)
        return float(np.nanmean(vals)) if vals.size and not np.all(np.isnan(vals)) else math.nan

    return {"final_gamma": result.final_gamma, "return": avg("mean_return"), "gamma": avg("gamma"),
            "advantage_mean": avg("advantage_mean"), "advantage_std": avg("advantage_std")}


__all__ = [
    "AGG_SCHEMA", "COLUMNS", "OUTPUT_ENV", "QUANTITIES", "SCHEMA_VERSION", "MetricsRow", "RunResult",
    "SweepResult", "aggregate", "emit_plot", "output_root", "read_table", "run_experiment", "summarize",
    "sweep", "write_aggregate", "write_metrics",
]
