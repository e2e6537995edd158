"""Problem definitions: coefficient values, closed forms, residual gates."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acpde import problems
from acpde import tensor as T

ANALYTIC = ["burgers_type", "reaction_diffusion", "quadratic_gradients"]


def _rand_states(problem, n, seed, spread=1.0):
    rng = np.random.default_rng(seed)
    return problem.start[None, :] + spread * rng.normal(size=(n, problem.d))


def test_registry_contents():
    assert problems.problem_names() == [
        "allen_cahn", "burgers_type", "hjb", "pricing_option",
        "quadratic_gradients", "reaction_diffusion",
    ]
    with pytest.raises(KeyError, match="unknown problem"):
        problems.make_problem("heat")


def test_override_validation():
    p = problems.make_problem("burgers_type", {"num_steps": 60})
    assert p.num_steps == 60
    with pytest.raises(ValueError, match="nonsense"):
        problems.make_problem("hjb", {"nonsense": 1})


def test_burgers_diffusion_tracks_dimension():
    # the closed form forces the diffusion scale to equal d
    assert problems.make_problem("burgers_type").sigma0 == 50.0
    assert problems.make_problem("burgers_type", {"d": 5}).sigma0 == 5.0
    assert problems.make_problem("burgers_type", {"sigma0": 7.0}).sigma0 == 7.0


def test_control_problem_values():
    p = problems.make_problem("hjb")
    assert p.terminal(np.zeros((1, 100)))[0, 0] == pytest.approx(np.log(0.5))
    z0 = np.zeros((3, 100))
    y = np.full((3, 1), 2.7)
    np.testing.assert_array_equal(p.generator_np(0.0, z0, y, z0), np.zeros((3, 1)))
    v = np.ones((2, 100))
    np.testing.assert_allclose(p.diffusion(0.0, v, v), np.sqrt(2.0) * v)
    assert p.drift(0.0, v) is None


def test_bistable_problem_values():
    p = problems.make_problem("allen_cahn")
    assert p.terminal(np.zeros((1, 100)))[0, 0] == pytest.approx(0.5)
    x = np.zeros((2, 100))
    z = np.zeros((2, 100))
    for root in (0.0, 1.0, -1.0):
        y = np.full((2, 1), root)
        np.testing.assert_allclose(p.generator_np(0.0, x, y, z), 0.0, atol=1e-15)
    assert p.monitor == "loss"


def test_pricing_values():
    p = problems.make_problem("pricing_option")
    x = np.full((1, 100), 100.0)
    x[0, 0] = 130.0
    assert p.terminal(x)[0, 0] == pytest.approx(10.0)
    x[0, 0] = 150.0
    assert p.terminal(x)[0, 0] == pytest.approx(30.0)
    v = np.ones((1, 100))
    np.testing.assert_allclose(p.diffusion(0.0, p.start[None, :], v), 20.0 * v)
    np.testing.assert_allclose(p.drift(0.0, p.start[None, :]), 6.0 * np.ones((1, 100)))


def test_pricing_rate_coefficient_flag():
    base = problems.make_problem("pricing_option")
    flagged = problems.make_problem("pricing_option", {"use_rb_coefficient": True})
    rng = np.random.default_rng(0)
    x = base.start[None, :] * rng.uniform(0.8, 1.2, size=(4, 100))
    y = rng.normal(size=(4, 1))
    z = rng.normal(size=(4, 100))
    s = z.sum(axis=1, keepdims=True)
    shortfall = np.maximum(s / base.vol - y, 0.0)
    diff = flagged.generator_np(0.0, x, y, z) - base.generator_np(0.0, x, y, z)
    np.testing.assert_allclose(diff, base.lend_rate * shortfall, atol=1e-12)


def test_transport_terminal_value():
    p = problems.make_problem("burgers_type")
    g0 = p.terminal(np.zeros((1, 50)))[0, 0]
    assert g0 == pytest.approx(np.exp(0.2) / (1.0 + np.exp(0.2)), abs=1e-9)


def test_clipped_source_driver_cases():
    p = problems.make_problem("reaction_diffusion")
    x = np.zeros((1, 100))
    z = np.zeros((1, 100))
    # bracket -1 and 0 at (t=0, x=0) where the source term vanishes
    assert p.generator_np(0.0, x, np.array([[0.6]]), z)[0, 0] == pytest.approx(1.0)
    assert p.generator_np(0.0, x, np.array([[1.6]]), z)[0, 0] == pytest.approx(0.0, abs=1e-15)
    assert p.terminal(x)[0, 0] == pytest.approx(1.6)


def test_radial_sine_values():
    p = problems.make_problem("quadratic_gradients")
    assert p.terminal(np.zeros((1, 100)))[0, 0] == 0.0
    assert p.exact_solution(0.0, np.zeros((1, 100)))[0, 0] == pytest.approx(np.sin(1.0))


def test_reference_values():
    assert problems.make_problem("burgers_type").reference_value() == pytest.approx(0.5)
    assert problems.make_problem("reaction_diffusion").reference_value() == pytest.approx(1.6)
    assert problems.make_problem("quadratic_gradients").reference_value() == pytest.approx(np.sin(1.0))
    assert problems.make_problem("hjb").reference_value() is None


@pytest.mark.parametrize("name", ANALYTIC)
def test_terminal_consistency(name):
    p = problems.make_problem(name)
    x = _rand_states(p, 100, seed=1)
    np.testing.assert_allclose(p.exact_solution(p.total_time, x), p.terminal(x), atol=1e-12)


@pytest.mark.parametrize("name", ANALYTIC)
def test_analytic_residual_with_closed_form_derivatives(name):
    p = problems.make_problem(name)
    rng = np.random.default_rng(2)
    for _ in range(5):
        t = rng.uniform(0.05, 0.95) * p.total_time
        x = _rand_states(p, 16, seed=int(rng.integers(1 << 30)), spread=0.5)
        u, u_t, grad, half_trace = p.exact_partials(t, x)
        z = p.diffusion_transpose(t, x, grad)
        residual = u_t + half_trace + p.generator_np(t, x, u, z)
        assert np.max(np.abs(residual)) < 1e-8


@pytest.mark.parametrize("name", ANALYTIC)
def test_finite_difference_residual_low_dimension(name):
    p = problems.make_problem(name, {"d": 5})
    rng = np.random.default_rng(3)
    h, ht = 1e-4, 1e-5

    def u(t, x_row):
        return p.exact_solution(t, x_row[None, :])[0, 0]

    for _ in range(4):
        t = rng.uniform(0.2, 0.8) * p.total_time
        x = rng.normal(size=5) * 0.5
        u_t = (u(t + ht, x) - u(t - ht, x)) / (2.0 * ht)
        grad = np.zeros(5)
        lap = 0.0
        for i in range(5):
            e = np.zeros(5)
            e[i] = h
            up, um, u0 = u(t, x + e), u(t, x - e), u(t, x)
            grad[i] = (up - um) / (2.0 * h)
            lap += (up - 2.0 * u0 + um) / (h * h)
        z = p.diffusion_transpose(t, x[None, :], grad[None, :])
        f = p.generator_np(t, x[None, :], np.array([[u(t, x)]]), z)[0, 0]
        residual = u_t + 0.5 * p.sigma0**2 * lap + f
        assert abs(residual) < 1e-4


@pytest.mark.parametrize("name", problems.problem_names())
def test_tensor_and_numpy_drivers_agree(name):
    p = problems.make_problem(name)
    rng = np.random.default_rng(4)
    x = _rand_states(p, 8, seed=5, spread=0.3)
    y = rng.normal(size=(8, 1))
    z = rng.normal(size=(8, p.d))
    t = 0.4 * p.total_time
    via_np = p.generator_np(t, x, y, z)
    via_tensor = p.generator(t, x, T.constant(y), T.constant(z))
    assert via_np.shape == (8, 1)
    np.testing.assert_array_equal(via_tensor.data, via_np)


@settings(max_examples=25, deadline=None)
@given(
    name=st.sampled_from(problems.problem_names()),
    yval=st.floats(min_value=-50.0, max_value=50.0),
    zval=st.floats(min_value=-10.0, max_value=10.0),
    frac=st.floats(min_value=0.0, max_value=0.999),
)
def test_driver_finite_for_bounded_inputs(name, yval, zval, frac):
    p = problems.make_problem(name)
    t = frac * p.total_time
    x = p.start[None, :] + 0.1
    f = p.generator_np(t, x, np.array([[yval]]), np.full((1, p.d), zval))
    assert np.isfinite(f).all()


def test_describe_is_json_ready():
    import json

    for name in problems.problem_names():
        blob = json.dumps(problems.make_problem(name).describe())
        assert name in blob
