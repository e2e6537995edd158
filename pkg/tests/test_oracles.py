"""Reference-value machinery: MC estimators, branching trees, closed forms."""

import json
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from acpde import backend, oracles, problems


def hjb():
    return problems.make_problem("hjb")


def allen_cahn():
    return problems.make_problem("allen_cahn")


def linear_terminal(x):
    return x.mean(axis=1, keepdims=True) + 1.0


# result type -------------------------------------------------------------------

def test_result_validation_and_serialization():
    r = oracles.OracleResult(1.5, 0.1, 1000, "plain_mc")
    assert json.loads(json.dumps(r.as_dict()))["value"] == 1.5
    with pytest.raises(ValueError, match="negative standard error"):
        oracles.OracleResult(1.0, -0.1, 10, "x")
    with pytest.raises(ValueError, match="non-finite"):
        oracles.OracleResult(math.nan, 0.0, 10, "x")


def test_argument_validation():
    prob = hjb()
    with pytest.raises(ValueError, match="risk aversion"):
        oracles.hjb_reference(prob.terminal, 1.0, 0.0, prob.start, 10**4, 0)
    with pytest.raises(ValueError, match="at least"):
        oracles.hjb_reference(prob.terminal, 1.0, 1.0, prob.start, 10**3, 0)
    with pytest.raises(ValueError, match="exceeds"):
        oracles.hjb_reference(prob.terminal, 1.0, 1.0, prob.start, 2**31 + 1, 0)


# log-transform MC ----------------------------------------------------------------

def test_degenerate_horizon_returns_terminal_exactly():
    prob = hjb()
    r = oracles.hjb_reference(prob.terminal, 0.0, 1.0, prob.start, 10**4, 42)
    assert r.value == math.log(0.5)
    assert r.stderr == 0.0
    assert r.samples_used == 0


def test_control_reference_value_at_scale():
    prob = hjb()
    r = oracles.hjb_reference(prob.terminal, 1.0, 1.0, prob.start, 2 * 10**5, seed=3)
    assert abs(r.value - 4.5903) < 0.005
    assert 0.0 < r.stderr < 1e-3
    assert r.samples_used == 2 * 10**5


def test_doubling_samples_drifts_less_than_three_stderr():
    prob = hjb()
    a = oracles.hjb_reference(prob.terminal, 1.0, 1.0, prob.start, 10**5, seed=3)
    b = oracles.hjb_reference(prob.terminal, 1.0, 1.0, prob.start, 2 * 10**5, seed=3)
    assert abs(a.value - b.value) < 3.0 * a.stderr


def test_two_seeds_agree_within_six_stderr():
    prob = hjb()
    a = oracles.hjb_reference(prob.terminal, 1.0, 1.0, prob.start, 5 * 10**4, seed=1)
    b = oracles.hjb_reference(prob.terminal, 1.0, 1.0, prob.start, 5 * 10**4, seed=2)
    assert abs(a.value - b.value) < 6.0 * max(a.stderr, b.stderr)


def test_small_risk_aversion_closes_the_jensen_gap():
    x = np.ones(10)
    j = oracles.hjb_reference(linear_terminal, 1.0, 1e-3, x, 10**5, seed=9)
    p = oracles.plain_mc_reference(linear_terminal, 1.0, x, 10**5, seed=9)
    assert abs(j.value - p.value) < 3.0 * math.hypot(j.stderr, p.stderr)


def test_stderr_scales_like_inverse_sqrt_samples():
    prob = hjb()
    sizes = [10**4, 4 * 10**4, 16 * 10**4]
    errs = [oracles.hjb_reference(prob.terminal, 1.0, 1.0, prob.start, m, seed=5).stderr
            for m in sizes]
    slope = np.polyfit(np.log(sizes), np.log(errs), 1)[0]
    assert -0.6 < slope < -0.4


# branching diffusion --------------------------------------------------------------

def test_default_decomposition_reproduces_the_bistable_driver():
    prob = allen_cahn()
    y = np.array([[-1.0], [0.0], [0.5], [1.0]])
    mine = oracles.decomposition_driver(y, 1.0, (1, 3), (0.5, 0.5), (4.0, -2.0))
    theirs = prob.generator_np(0.0, np.zeros((4, prob.d)), y, None)
    assert_allclose(mine, theirs, rtol=0, atol=1e-15)


def test_decomposition_validation():
    kw = dict(total_time=0.3, x=np.zeros(4), samples=10**4, seed=0)
    with pytest.raises(ValueError, match="sum to 1"):
        oracles.allen_cahn_reference(probs=(0.4, 0.4), **kw)
    with pytest.raises(ValueError, match="equal length"):
        oracles.allen_cahn_reference(powers=(1, 3, 5), **kw)
    with pytest.raises(ValueError, match="non-negative integers"):
        oracles.allen_cahn_reference(powers=(1, 2.5), **kw)
    with pytest.raises(ValueError, match="rate must be positive"):
        oracles.allen_cahn_reference(rate=0.0, **kw)


def test_supercritical_growth_rejected_with_bound():
    with pytest.raises(ValueError, match="bound"):
        oracles.allen_cahn_reference(0.3, np.zeros(4), 10**4, 0, rate=10.0)


def test_branching_value_at_scale():
    prob = allen_cahn()
    r = oracles.allen_cahn_reference(prob.total_time, prob.start, 2 * 10**5, seed=11)
    assert abs(r.value - 0.0528) < 0.0015
    assert 0.0 < r.stderr < 5e-4


def test_branching_doubling_stability():
    prob = allen_cahn()
    a = oracles.allen_cahn_reference(prob.total_time, prob.start, 10**5, seed=11)
    b = oracles.allen_cahn_reference(prob.total_time, prob.start, 2 * 10**5, seed=11)
    assert abs(a.value - b.value) < 3.0 * a.stderr


def test_no_branching_limit_is_plain_heat_mc():
    # weight 1 on a single offspring makes the driver vanish identically,
    # so the tree estimator must agree with direct MC of E[g]
    prob = allen_cahn()
    tree = oracles.allen_cahn_reference(prob.total_time, prob.start, 2 * 10**4,
                                        seed=4, powers=(1,), probs=(1.0,), weights=(1.0,))
    direct = oracles.plain_mc_reference(prob.terminal, prob.total_time,
                                        prob.start, 2 * 10**4, seed=4)
    assert abs(tree.value - direct.value) < 3.0 * math.hypot(tree.stderr, direct.stderr)


def test_branching_stderr_slope():
    prob = allen_cahn()
    sizes = [10**4, 4 * 10**4, 16 * 10**4, 64 * 10**4]
    errs = [oracles.allen_cahn_reference(prob.total_time, prob.start, m, seed=5).stderr
            for m in sizes]
    slope = np.polyfit(np.log(sizes), np.log(errs), 1)[0]
    assert -0.6 < slope < -0.4


def test_branching_backends_agree():
    prob = allen_cahn()
    args = (prob.total_time, prob.start, 10**4)
    nb = oracles.allen_cahn_reference(*args, seed=11)
    old = backend.set_backend("numpy")
    try:
        np_ = oracles.allen_cahn_reference(*args, seed=11)
    finally:
        backend.set_backend(old)
    assert_allclose(np_.value, nb.value, rtol=1e-9)
    assert_allclose(np_.stderr, nb.stderr, rtol=1e-6)


def test_mc_backends_agree():
    prob = hjb()
    nb = oracles.hjb_reference(prob.terminal, 1.0, 1.0, prob.start, 10**4, seed=3)
    old = backend.set_backend("numpy")
    try:
        np_ = oracles.hjb_reference(prob.terminal, 1.0, 1.0, prob.start, 10**4, seed=3)
    finally:
        backend.set_backend(old)
    assert_allclose(np_.value, nb.value, rtol=1e-11)


# closed forms ---------------------------------------------------------------------

def test_analytic_values():
    assert oracles.analytic_reference(problems.make_problem("burgers_type")).value == 0.5
    assert_allclose(
        oracles.analytic_reference(problems.make_problem("reaction_diffusion")).value,
        1.6, rtol=1e-15)
    qg = oracles.analytic_reference(problems.make_problem("quadratic_gradients"))
    assert_allclose(qg.value, math.sin(1.0), rtol=1e-15)
    assert qg.stderr == 0.0
    assert qg.samples_used == 0


def test_analytic_refuses_without_closed_form():
    with pytest.raises(ValueError, match="no closed-form"):
        oracles.analytic_reference(hjb())


def test_residual_gate_refuses_a_broken_candidate():
    # wrong diffusion scale invalidates the logistic solution
    broken = problems.make_problem("burgers_type", {"d": 5, "sigma0": 3.0})
    assert oracles.closed_form_residual(broken) > 1e-3
    with pytest.raises(ValueError, match="residual"):
        oracles.analytic_reference(broken)


def test_residuals_are_tiny_for_served_forms():
    for name in ("burgers_type", "reaction_diffusion", "quadratic_gradients"):
        assert oracles.closed_form_residual(problems.make_problem(name)) < 1e-8


# dispatch -------------------------------------------------------------------------

def test_reference_dispatch():
    assert oracles.reference_for(hjb(), 10**4, 0).method == "log_transform_mc"
    assert oracles.reference_for(allen_cahn(), 10**4, 0).method == "branching"
    burgers = oracles.reference_for(problems.make_problem("burgers_type"), 10**4, 0)
    assert burgers.method == "analytic"
    assert burgers.value == 0.5
    assert oracles.reference_for(problems.make_problem("pricing_option"), 10**4, 0) is None
