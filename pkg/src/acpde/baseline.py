"""Per-step-subnet baseline: trainable u0 scalar, trainable start gradient,
and one independent network per interior time step.

Shares the rollout code path with the actor-critic model; only the providers
differ. The start-step surrogate is Z_0 = sigma^T(0, xi) applied to the
trainable gradient vector, matching the convention that the networks at later
steps output sigma^T grad u directly.
"""

import numpy as np

from . import nn, philox, solver
from . import tensor as T

U0_TAG = 0
GRAD_TAG = 1
SUBNET_TAG_STRIDE = 8  # 3 weights per subnet, strided like the other streams


class DbsdeModel:
    """Baseline with a scalar value parameter and N-1 step subnets."""

    kind = "dbsde"

    def __init__(self, problem, seed, u0_range=None):
        lo, hi = u0_range if u0_range is not None else problem.u0_range
        if lo > hi:
            raise ValueError(f"empty initial value range: ({lo}, {hi})")
        self.problem = problem
        d = problem.d
        u = philox.uniforms_grid(seed, philox.STREAM_DBSDE_INIT, U0_TAG, 1, 1)
        self.u0 = T.parameter(lo + (hi - lo) * u)
        # bound sqrt(6 / (d + 1)): the value head is one unit wide
        self.grad_u0 = T.parameter(
            nn.xavier_uniform(seed, philox.STREAM_DBSDE_INIT, GRAD_TAG, d, 1).reshape(1, d)
        )
        hidden = (d + 10, d + 10)
        # subnets are z heads: start small for the same stability reason as
        # the actor (see solver.Z_HEAD_SCALE_INIT)
        self.subnets = [
            nn.Mlp(nn.MlpConfig(d, d, hidden, out_scale_init=solver.Z_HEAD_SCALE_INIT),
                   seed, philox.STREAM_DBSDE_INIT, SUBNET_TAG_STRIDE * (n + 1))
            for n in range(problem.num_steps - 1)
        ]

    def parameters(self):
        params = [self.u0, self.grad_u0]
        for net in self.subnets:
            params += net.parameters()
        return params

    def provide_u0(self, x0, training):
        return self.u0 * np.ones((x0.shape[0], 1))

    def provide_z(self, n, t, x, training):
        if n == 0:
            factor = self.problem.diffusion_transpose_factor(t, x)
            return self.grad_u0 * (factor * np.ones_like(x))
        return self.subnets[n - 1].forward(T.constant(x), training)

    def u0_estimate(self):
        return float(self.u0.data[0, 0])

    def state(self):
        state = {
            "u0": {"u0": self.u0.data.copy()},
            "grad_u0": {"grad_u0": self.grad_u0.data.copy()},
        }
        for i, net in enumerate(self.subnets):
            state[f"subnet{i}"] = net.state_dict()
        return state

    def load_state(self, states):
        self.u0.data = states["u0"]["u0"].copy()
        self.grad_u0.data = states["grad_u0"]["grad_u0"].copy()
        for i, net in enumerate(self.subnets):
            net.load_state_dict(states[f"subnet{i}"])
