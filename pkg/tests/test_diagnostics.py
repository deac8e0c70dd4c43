import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selftune.agent import LossCoefs, NetworkSpec, init_params, policy_probs
from selftune.autodiff.dual import Dual
from selftune.diagnostics import (
    AdvantageStats,
    advantage_stats,
    finite_diff_meta_gradient,
    normalize_advantages,
    oracle_consistency_check,
    oracle_resolves,
    outer_advantage_stats,
    random_policies,
    rel_err,
)
from selftune.envs import init_rollout, rollout_batch
from selftune.envs.chain import NONE_SLOT, NUM_ACTIONS, OBS_DIM
from selftune.errors import DegenerateBatchError, NumericalError
from selftune.meta import MetaConfig, OptimizerState, inner_update, mg_meta_gradient

SPEC = NetworkSpec("linear", (OBS_DIM,), NUM_ACTIONS)
COEFS = LossCoefs(0.0, 1.0, 0.0, 0.005)


def cfg(source, normalize=False):
    return MetaConfig(SPEC, COEFS, COEFS, 1.0, (0.9, 1.0), "oracle", source, normalize=normalize)


def batches(lead=0.0, n=64, seed=0):
    params = init_params(SPEC, np.random.default_rng(seed))
    params.policy["w"][NONE_SLOT, 0] += lead
    state = init_rollout("discounting-chain", n, seed)
    pol = lambda o: policy_probs(params.policy, o, SPEC)
    inner, state = rollout_batch(pol, 100, state)
    outer, _ = rollout_batch(pol, 100, state)
    return params, inner, outer


# finite differences --------------------------------------------------------------

def test_fd_of_square_and_constant():
    assert finite_diff_meta_gradient(lambda z: z * z, 1.5) == pytest.approx(3.0, abs=1e-8)
    assert finite_diff_meta_gradient(lambda z: 4.0, 0.3) == 0.0


def test_fd_errors():
    with pytest.raises(ValueError):
        finite_diff_meta_gradient(lambda z: z, 0.0, epsilon=0.0)
    with pytest.raises(NumericalError):
        finite_diff_meta_gradient(lambda z: np.nan, 0.0)


def test_oracle_resolution():
    assert oracle_resolves(lambda z: 0.7 + 1e-3 * z, 0.0)
    # a slope far below the f64 spacing of the values cannot be checked at epsilon = 1e-6
    assert not oracle_resolves(lambda z: 0.7 + 1e-9 * z + 1e-16 * np.sin(1e13 * z), 0.0)
    assert not oracle_resolves(lambda z: 0.7, 0.0)


def test_rel_err_floor():
    assert rel_err(0.0, 0.0) == 0.0
    assert rel_err(1.0, 1.0 + 1e-9) < 1e-8


# advantage statistics -------------------------------------------------------------

def test_normalize_example_and_idempotence():
    out = normalize_advantages(np.array([1.0, 3.0])).val
    np.testing.assert_allclose(out, [-1.0, 1.0], atol=1e-15)
    again = normalize_advantages(out).val
    np.testing.assert_allclose(again, out, atol=1e-12)


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=200))
def test_normalized_mean_is_zero(xs):
    a = np.array(xs)
    if a.std() <= 1e-6 * max(1.0, np.abs(a).max()):
        return
    assert abs(float(np.mean(normalize_advantages(a).val))) < 1e-10


def test_normalize_degenerate_batches():
    with pytest.raises(DegenerateBatchError):
        normalize_advantages(np.ones(5))
    with pytest.raises(DegenerateBatchError):
        normalize_advantages(np.array([1.0]))


def test_advantage_stats_record():
    s = advantage_stats(Dual(np.array([1.0, 2.0, 3.0]), np.ones(3)), "fixed")
    assert (s.mean, s.count, s.source) == (2.0, 3, "fixed")
    assert s.std == pytest.approx(np.sqrt(2 / 3))
    with pytest.raises(ValueError):
        AdvantageStats(0.0, 0.0, 0, "fixed")
    with pytest.raises(ValueError):
        AdvantageStats(0.0, 0.0, 1, "other")


def test_outer_advantage_stats_tags_and_determinism():
    params, _, outer = batches()
    a = outer_advantage_stats(outer, params, cfg("biased"), 0.95)
    b = outer_advantage_stats(outer, params, cfg("biased"), 0.95)
    assert a == b and a.source == "biased" and a.count == 64 * 100
    assert outer_advantage_stats(outer, params, cfg("fixed"), 0.95).source == "fixed"
    n = outer_advantage_stats(outer, params, cfg("biased", normalize=True), 0.95)
    assert n.source == "normalized" and abs(n.mean) < 1e-10


def test_biased_advantages_equal_fixed_at_the_outer_discount():
    params, _, outer = batches()
    a = outer_advantage_stats(outer, params, cfg("biased"), 1.0 - 1e-15)
    b = outer_advantage_stats(outer, params, cfg("fixed"), 0.95)
    assert a.mean == pytest.approx(b.mean, abs=1e-9)


def test_fixed_source_advantages_are_nearly_centered_on_policy():
    params, _, outer = batches(n=512)
    s = outer_advantage_stats(outer, params, cfg("fixed"), 0.95)
    # on-policy TD errors under the true gamma'-value have zero expectation
    assert abs(s.mean) < 3 * s.std / np.sqrt(s.count / 100)


def test_biased_advantages_are_off_center_for_far_sighted_policy():
    # a policy leaning to the 1.1 chain: V^gamma undervalues the delayed payoff,
    # so the gamma-discounted TD errors under gamma' = 1 are positive on average
    params, _, outer = batches(lead=-5.0, n=256)
    params.policy["w"][NONE_SLOT, 4] += 5.0
    biased = outer_advantage_stats(outer, params, cfg("biased"), 0.9)
    fixed = outer_advantage_stats(outer, params, cfg("fixed"), 0.9)
    assert biased.mean > 0.005 and abs(biased.mean) > 10 * abs(fixed.mean)


# oracle ------------------------------------------------------------------------

def test_oracle_consistency_on_random_pairs():
    rng = np.random.default_rng(0)
    report = oracle_consistency_check(random_policies(rng, 1000), rng.uniform(0.0, 1.0, 1000))
    assert report.n == 1000 and report.max_abs_discrepancy < 1e-12


def test_oracle_uniform_policy_undiscounted():
    from selftune.envs.chain import ChainState, dc_analytic_value

    assert dc_analytic_value(ChainState(selected=None, timestep=0), np.full(5, 0.2), 1.0) == pytest.approx(1.02)


# bias diagnostics on the meta-gradient ---------------------------------------------

def test_normalization_keeps_biased_meta_gradient_sign():
    params, inner, outer = batches(lead=2.0, n=512, seed=0)
    opt = OptimizerState("sgd", 0.5)
    plain = mg_meta_gradient(params, 2.0, inner, outer, cfg("biased"), opt).meta_grad
    normed = mg_meta_gradient(params, 2.0, inner, outer, cfg("biased", normalize=True), opt).meta_grad
    assert np.sign(plain) == np.sign(normed) == 1.0


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 1000))
def test_theta_prime_does_not_depend_on_outer_source(seed):
    params, inner, _ = batches(n=4, seed=seed)
    a, _, _ = inner_update(params, 0.0, inner, cfg("biased"), OptimizerState("sgd", 0.5))
    b, _, _ = inner_update(params, 0.0, inner, cfg("fixed"), OptimizerState("sgd", 0.5))
    for k in a.flat():
        assert np.array_equal(a.flat()[k].val, b.flat()[k].val)
