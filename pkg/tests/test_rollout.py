"""Value-recursion checks on hand-built paths and tiny problems."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from acpde import problems, sde, solver
from acpde import tensor as T
from acpde.rollout import (
    RolloutResult,
    constant_value_provider,
    exact_z_provider,
    rollout,
    terminal_gap,
)


class ZeroDriverProblem(problems.Problem):
    """f identically zero: the value process is a pure stochastic integral."""

    def __init__(self, d=3, num_steps=4, total_time=1.0):
        super().__init__("zero_driver", d, total_time, num_steps, 1.0, 1e-2,
                         1e-3, 10, (0.0, 1.0), batch_size=8)

    def _driver(self, t, x, y, z, ops):
        return y * 0.0

    def terminal(self, x):
        return x.sum(axis=1, keepdims=True)


def zero_z_provider(d):
    def provide(n, t, x, training):
        return T.constant(np.zeros((x.shape[0], d)))

    return provide


def fixed_z_provider(values):
    def provide(n, t, x, training):
        return T.constant(values)

    return provide


def test_zero_driver_zero_z_keeps_u_constant_bitwise():
    prob = ZeroDriverProblem()
    paths = sde.sample_paths(prob, 16, seed=3)
    res = rollout(prob, paths, constant_value_provider(0.7),
                  zero_z_provider(prob.d), training=False)
    assert_array_equal(res.uT.data, res.u0.data)
    # every intermediate value too
    for u in res.u_path:
        assert_array_equal(u.data, res.u0.data)


def test_single_step_stochastic_integral():
    # d=1, N=1, Z=2, dW=0.3: uT = u0 + 2 * 0.3
    prob = ZeroDriverProblem(d=1, num_steps=1)
    paths = sde.PathBatch(
        dW=np.array([[[0.3]]]),
        X=np.zeros((1, 2, 1)),
        t_grid=np.array([0.0, 1.0]),
        seed=0,
    )
    res = rollout(prob, paths, constant_value_provider(0.7),
                  fixed_z_provider(np.array([[2.0]])), training=False)
    assert_allclose(res.uT.data, [[1.3]], rtol=0, atol=1e-15)


def test_hjb_zero_actor_is_identity():
    # f = -|z|^2 vanishes at z = 0, so u never moves
    prob = problems.make_problem("hjb", {"d": 6})
    paths = sde.sample_paths(prob, 32, seed=11)
    res = rollout(prob, paths, constant_value_provider(0.7),
                  zero_z_provider(prob.d), training=False)
    assert_array_equal(res.uT.data, res.u0.data)


def test_gain_is_linear_in_z():
    prob = ZeroDriverProblem(d=3, num_steps=5)
    paths = sde.sample_paths(prob, 8, seed=5)
    base = philox_free_matrix(8, 3)

    def run(scale):
        res = rollout(prob, paths, constant_value_provider(0.0),
                      fixed_z_provider(scale * base), training=False)
        return res.uT.data - res.u0.data

    assert_array_equal(run(2.0), 2.0 * run(1.0))


def philox_free_matrix(rows, cols):
    # any fixed values do; independence from the path RNG is the point
    return np.linspace(-1.0, 1.0, rows * cols).reshape(rows, cols)


def test_path_list_endpoints_are_same_objects():
    prob = ZeroDriverProblem()
    paths = sde.sample_paths(prob, 4, seed=1)
    res = rollout(prob, paths, constant_value_provider(0.2),
                  zero_z_provider(prob.d), training=False)
    assert res.u0 is res.u_path[0]
    assert res.uT is res.u_path[-1]
    assert len(res.u_path) == prob.num_steps + 1
    assert res.values().shape == (4, prob.num_steps + 1)


def test_literal_step_drops_the_time_increment():
    prob = problems.make_problem("allen_cahn", {"d": 1, "num_steps": 2})
    paths = sde.sample_paths(prob, 6, seed=9)
    z = zero_z_provider(1)

    def manual(scaled):
        dt = prob.total_time / prob.num_steps
        u = np.full((6, 1), 0.5)
        for _ in range(prob.num_steps):
            f = u - u**3
            u = u - (f * dt if scaled else f)
        return u

    res_default = rollout(prob, paths, constant_value_provider(0.5), z, training=False)
    res_literal = rollout(prob, paths, constant_value_provider(0.5), z,
                          training=False, literal_step=True)
    assert_allclose(res_default.uT.data, manual(True), rtol=0, atol=1e-15)
    assert_allclose(res_literal.uT.data, manual(False), rtol=0, atol=1e-15)
    assert not np.allclose(res_default.uT.data, res_literal.uT.data)


def test_divergent_values_raise_with_step_index():
    prob = problems.make_problem("hjb", {"d": 2, "num_steps": 4})
    paths = sde.sample_paths(prob, 4, seed=2)
    huge = fixed_z_provider(np.full((4, 2), 1e200))
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(sde.DivergenceError, match="after step 0"):
            rollout(prob, paths, constant_value_provider(0.0), huge, training=False)


def test_terminal_gap_values_and_signs():
    uT = T.constant(np.array([[0.5], [2.0], [1.0]]))
    g = np.array([[1.1], [1.0], [1.0]])
    res = RolloutResult(u_path=[uT], u0=uT, uT=uT, g_T=g)
    gap = terminal_gap(res).data
    assert_allclose(gap[0, 0], 0.6, rtol=0, atol=1e-15)
    assert gap[1, 0] < 0.0
    assert gap[2, 0] == 0.0


def test_gradients_reach_both_networks():
    prob = problems.make_problem("hjb", {"d": 4})
    model = solver.ActorCriticModel(prob, seed=7)
    paths = sde.sample_paths(prob, 16, seed=7)
    with T.GradientTape() as tape:
        res = rollout(prob, paths, model.provide_u0, model.provide_z, training=True)
        loss = solver.clipped_loss(terminal_gap(res))
    tape.backward(loss)
    actor_norm = sum(np.abs(w.grad).sum() for w in model.actor.weights)
    # x0 is the tiled start point, so batchnorm centers it and the critic
    # weight matrices get exactly zero gradient at init; the shift
    # parameters are the live path (relu'(0) = 1 keeps it open)
    critic_norm = sum(
        np.abs(p.grad).sum() for p in model.critic.parameters() if p.grad is not None
    )
    assert actor_norm > 0.0
    assert critic_norm > 0.0
    assert np.abs(model.critic.out_shift.grad).sum() > 0.0


def test_exact_value_and_gradient_nearly_close_the_gap():
    # with the closed form supplying u0 and z, the only residual is the
    # Euler discretization error, small at this step count
    prob = problems.make_problem("burgers_type", {"d": 5, "num_steps": 60})
    paths = sde.sample_paths(prob, 2000, seed=13)
    res = rollout(prob, paths, constant_value_provider(prob.reference_value()),
                  exact_z_provider(prob), training=False)
    gap = terminal_gap(res).data
    assert np.sqrt(np.mean(gap**2)) < 0.05
    assert abs(gap.mean()) < 0.01


def test_constant_provider_shape_and_value():
    provide = constant_value_provider(0.25)
    out = provide(np.zeros((5, 3)), True)
    assert_array_equal(out.data, np.full((5, 1), 0.25))
