"""Forward propagation of the value process along sampled paths.

The recursion is model-agnostic: a u0 provider supplies the initial value as
a (B, 1) tensor and a z provider supplies the gradient surrogate at each step
as a (B, d) tensor. The actor-critic pair, the per-step-subnet baseline, and
the closed-form consistency checks all share this single code path, so they
differ only in where u0 and Z come from.

The driver term is scaled by the step size by default. The update as
sometimes written without that factor is available behind `literal_step`
for side-by-side comparison; it is not used for any accuracy gate.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .sde import DivergenceError


@dataclass
class RolloutResult:
    u_path: list  # N+1 tensors of shape (B, 1)
    u0: object  # (B, 1) tensor, same object as u_path[0]
    uT: object  # (B, 1) tensor, same object as u_path[-1]
    g_T: np.ndarray  # (B, 1) terminal target values

    def values(self):
        """History as a plain (B, N+1) array."""
        return np.hstack([u.data for u in self.u_path])


def rollout(problem, paths, u0_provider, z_provider, training, literal_step=False):
    """Run the value recursion over one path batch."""
    dt = float(paths.t_grid[1] - paths.t_grid[0])
    u = u0_provider(paths.X[:, 0, :], training)
    u0 = u
    u_path = [u]
    for n in range(paths.num_steps):
        tn = float(paths.t_grid[n])
        xn = paths.X[:, n, :]
        z = z_provider(n, tn, xn, training)
        f = problem.generator(tn, xn, u, z)
        step_gain = T.rowsum(z * paths.dW[:, n, :])
        if literal_step:
            u = u - f + step_gain
        else:
            u = u - f * dt + step_gain
        if not np.isfinite(u.data).all():
            raise DivergenceError(f"non-finite value process after step {n}", step=n)
        u_path.append(u)
    g = problem.terminal(paths.X[:, -1, :])
    return RolloutResult(u_path=u_path, u0=u0, uT=u, g_T=g)


def terminal_gap(result):
    """g(X_T) - uT per sample, as a (B, 1) tensor."""
    return T.constant(result.g_T) - result.uT


def constant_value_provider(value):
    """u0 provider pinning a known scalar (consistency checks)."""

    def provide(x0, training):
        return T.constant(np.full((x0.shape[0], 1), float(value)))

    return provide


def exact_z_provider(problem):
    """z provider reading the closed-form sigma^T grad u (consistency checks)."""

    def provide(n, t, x, training):
        return T.constant(problem.exact_z(t, x))

    return provide
