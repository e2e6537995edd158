"""Euler-Maruyama simulation of the forward state process.

Brownian increments come from the counter RNG addressed by
(seed, PATHS stream, tag, sample row, step*d + coordinate), so a path batch
is a pure function of (problem, batch size, seed, tag) and can be regenerated
or sliced freely. The integration step itself is factored out so tests and
consistency checks can drive it with hand-picked increments.
"""

from dataclasses import dataclass

import numpy as np

from . import philox

PATH_DUMP_VERSION = 1


class DivergenceError(RuntimeError):
    """A simulated or trained quantity left the finite range."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


@dataclass
class PathBatch:
    dW: np.ndarray  # (B, N, d) Brownian increments
    X: np.ndarray  # (B, N+1, d) states
    t_grid: np.ndarray  # (N+1,)
    seed: int

    @property
    def batch_size(self):
        return self.dW.shape[0]

    @property
    def num_steps(self):
        return self.dW.shape[1]


def time_grid(total_time, num_steps):
    return np.linspace(0.0, total_time, num_steps + 1)


def euler_steps(problem, start, dW, t_grid):
    """Advance the state through all increments; returns X of shape (B, N+1, d)."""
    b, n, d = dW.shape
    dt = t_grid[1] - t_grid[0]
    x = np.empty((b, n + 1, d))
    x[:, 0, :] = start
    # overflow is the divergence signal here, not an error in itself
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n):
            cur = x[:, i, :]
            t = t_grid[i]
            nxt = cur + problem.diffusion(t, cur, dW[:, i, :])
            mu = problem.drift(t, cur)
            if mu is not None:
                nxt = nxt + mu * dt
            if not np.isfinite(nxt).all():
                raise DivergenceError(
                    f"non-finite state while advancing step {i} -> {i + 1}", step=i
                )
            x[:, i + 1, :] = nxt
    return x


def sample_paths(problem, batch_size, seed, tag=0):
    """Simulate a batch of state paths on the uniform grid."""
    n, d = problem.num_steps, problem.d
    grid = time_grid(problem.total_time, n)
    dt = grid[1] - grid[0]
    z = philox.normals_grid(seed, philox.STREAM_PATHS, tag, batch_size, n * d)
    dw = z.reshape(batch_size, n, d) * np.sqrt(dt)
    x = euler_steps(problem, problem.start, dw, grid)
    return PathBatch(dW=dw, X=x, t_grid=grid, seed=seed)


def save_paths(path, batch):
    """Debug dump of one PathBatch as a versioned npz."""
    np.savez(
        path,
        __version__=np.array(PATH_DUMP_VERSION),
        dW=batch.dW,
        X=batch.X,
        t_grid=batch.t_grid,
        seed=np.array(batch.seed, dtype=np.int64),
    )


def load_paths(path):
    with np.load(path) as z:
        version = int(z["__version__"])
        if version != PATH_DUMP_VERSION:
            raise ValueError(f"path dump version {version} is not supported")
        return PathBatch(dW=z["dW"], X=z["X"], t_grid=z["t_grid"], seed=int(z["seed"]))
