"""Policy and two-headed critic networks.

Parameters live in plain dicts of arrays (or Duals / tape Vars while being
differentiated), grouped into the four blocks of :class:`AgentParams`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from selftune.autodiff import ops
from selftune.autodiff import dual as D
from selftune.autodiff.dual import Dual
from selftune.autodiff.tape import value_of
from selftune.errors import ConfigError, ShapeError

ARCHITECTURES = ("linear", "conv-mlp")
GROUPS = ("policy", "torso", "inner_head", "outer_head")


@dataclass(frozen=True)
class NetworkSpec:
    architecture: str
    obs_shape: tuple
    num_actions: int
    conv_channels: tuple = (16, 32)
    hidden: int = 128
    kernel: int = 3

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"architecture must be one of {ARCHITECTURES}, got '{self.architecture}'")
        if self.architecture == "conv-mlp" and len(self.obs_shape) != 3:
            raise ConfigError("conv-mlp needs (H, W, C) observations")


@dataclass
class AgentParams:
    policy: dict
    torso: dict = field(default_factory=dict)
    inner_head: dict = field(default_factory=dict)
    outer_head: dict = field(default_factory=dict)

    def flat(self) -> dict:
        return {f"{g}/{k}": v for g in GROUPS for k, v in getattr(self, g).items()}

    @classmethod
    def from_flat(cls, flat: dict) -> "AgentParams":
        groups = {g: {} for g in GROUPS}
        for name, v in flat.items():
            g, k = name.split("/", 1)
            groups[g][k] = v
        return cls(**groups)

    def critic(self) -> dict:
        """Torso and both heads in one dict (keys prefixed by group)."""
        return {k: v for k, v in self.flat().items() if not k.startswith("policy/")}

    def map(self, fn) -> "AgentParams":
        return AgentParams.from_flat({k: fn(v) for k, v in self.flat().items()})

    def values(self) -> "AgentParams":
        """Plain arrays (tangents dropped)."""
        return self.map(lambda v: np.array(value_of(v).val))


def orthogonal(rng: np.random.Generator, shape, scale: float = 1.0) -> np.ndarray:
    rows, cols = shape
    a = rng.normal(size=(max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return scale * q[:rows, :cols]


def _conv_stack(rng, prefix: str, spec: NetworkSpec) -> dict:
    h, w, c = spec.obs_shape
    params = {}
    cin = c
    gain = np.sqrt(2.0)
    for i, cout in enumerate(spec.conv_channels):
        params[f"{prefix}conv{i}_w"] = orthogonal(rng, (cin * spec.kernel**2, cout), gain)
        params[f"{prefix}conv{i}_b"] = np.zeros(cout)
        cin = cout
    params[f"{prefix}dense_w"] = orthogonal(rng, (h * w * cin, spec.hidden), gain)
    params[f"{prefix}dense_b"] = np.zeros(spec.hidden)
    return params


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> AgentParams:
    """Orthogonal weights, zero biases, zero policy output layer (uniform start)."""
    if spec.architecture == "linear":
        obs_dim = int(np.prod(spec.obs_shape))
        return AgentParams(policy={"w": np.zeros((obs_dim, spec.num_actions)), "b": np.zeros(spec.num_actions)})
    policy = _conv_stack(rng, "", spec)
    policy["out_w"] = np.zeros((spec.hidden, spec.num_actions))
    policy["out_b"] = np.zeros(spec.num_actions)
    torso = _conv_stack(rng, "", spec)
    inner = {"w": orthogonal(rng, (spec.hidden, 1), 1.0), "b": np.zeros(1)}
    outer = {"w": orthogonal(rng, (spec.hidden, 1), 1.0), "b": np.zeros(1)}
    return AgentParams(policy, torso, inner, outer)


def _features(p: dict, obs, spec: NetworkSpec):
    x = obs
    for i in range(len(spec.conv_channels)):
        x = ops.relu(ops.conv2d(x, p[f"conv{i}_w"], p[f"conv{i}_b"]))
    n = value_of(x).shape[0]
    x = ops.reshape(x, (n, -1))
    return ops.relu(ops.add(ops.matmul(x, p["dense_w"]), p["dense_b"]))


def _flatten_obs(obs, spec: NetworkSpec) -> np.ndarray:
    obs = np.asarray(obs, dtype=float)
    lead = obs.shape[: obs.ndim - len(spec.obs_shape)]
    if tuple(obs.shape[len(lead) :]) != tuple(spec.obs_shape):
        raise ShapeError(f"observation shape {obs.shape[len(lead):]} != {spec.obs_shape}")
    return obs.reshape((-1,) + tuple(spec.obs_shape)), lead


def policy_forward(policy: dict, obs, spec: NetworkSpec):
    """Action log-probabilities, shape ``obs.shape[:-k] + (num_actions,)``."""
    x, lead = _flatten_obs(obs, spec)
    if spec.architecture == "linear":
        logits = ops.add(ops.matmul(x.reshape(len(x), -1), policy["w"]), policy["b"])
    else:
        h = _features(policy, x, spec)
        logits = ops.add(ops.matmul(h, policy["out_w"]), policy["out_b"])
    return ops.reshape(ops.log_softmax(logits), lead + (spec.num_actions,))


def policy_probs(policy: dict, obs, spec: NetworkSpec) -> np.ndarray:
    """Plain probabilities for acting (no tape, no tangents)."""
    plain = {k: np.asarray(value_of(v).val) for k, v in policy.items()}
    if spec.architecture == "linear":
        x, lead = _flatten_obs(obs, spec)
        logits = x.reshape(len(x), -1) @ plain["w"] + plain["b"]
        e = np.exp(logits - logits.max(axis=-1, keepdims=True))
        return (e / e.sum(axis=-1, keepdims=True)).reshape(lead + (spec.num_actions,))
    return np.exp(value_of(policy_forward(plain, obs, spec)).val)


def critic_forward(params: AgentParams, obs, spec: NetworkSpec):
    """(inner value, outer value) from one torso pass.

    The outer head reads the torso features through a gradient stop, so its
    loss never moves the torso.
    """
    if spec.architecture != "conv-mlp":
        raise ConfigError("critic_forward requires the conv-mlp architecture")
    x, lead = _flatten_obs(obs, spec)
    feats = _features(params.torso, x, spec)
    inner = ops.add(ops.matmul(feats, params.inner_head["w"]), params.inner_head["b"])
    outer = ops.add(ops.matmul(ops.stop_gradient(feats), params.outer_head["w"]), params.outer_head["b"])
    return ops.reshape(inner, lead), ops.reshape(outer, lead)


def entropy(log_probs) -> Dual:
    """Mean Shannon entropy (nats) over all leading positions."""
    lp = value_of(log_probs)
    h = -D.sum(D.mul(D.exp(lp), lp), axis=-1)
    return D.mean(h)


def entropy_terms(log_probs):
    """Per-state entropies, differentiable on the tape."""
    return ops.neg(ops.sum(ops.mul(ops.exp(log_probs), log_probs), axis=-1))
