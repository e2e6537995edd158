"""Feedforward networks, their initializer, Adam, and checkpoint io.

Layer pattern (identical for every network in the package):

    x @ W1 -> batchnorm -> relu -> @ W2 -> batchnorm -> relu -> @ W3
      -> elementwise scale * y + shift

There are no bias vectors; the batch-norm shift plays that role. The output
layer carries a plain trainable scale/shift pair (initialized to 1/0) and no
normalization, so it never touches batch statistics. With `batchnorm=False`
the network degenerates to weights only: no normalization, no output
scale/shift.

Weight matrices are Xavier-uniform, drawn from the deterministic counter RNG,
so a (seed, stream, tag) triple fully determines every initial parameter.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import philox
from . import tensor as T

CHECKPOINT_VERSION = 1


def xavier_bound(fan_in, fan_out):
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def xavier_uniform(seed, stream, tag, fan_in, fan_out):
    """Deterministic Xavier-uniform matrix of shape (fan_in, fan_out)."""
    b = xavier_bound(fan_in, fan_out)
    u = philox.uniforms_grid(seed, stream, tag, fan_in, fan_out)
    return (2.0 * u - 1.0) * b


@dataclass
class MlpConfig:
    input_dim: int
    output_dim: int
    hidden_dims: tuple = ()
    batchnorm: bool = True
    bn_eps: float = 1e-6
    bn_momentum: float = 0.99
    # Initial value of the trainable output scale. Networks whose output
    # multiplies the Brownian increments (z heads) start small: the value
    # recursion feeds u back through the driver, and stiff drivers (cubic,
    # quadratic-in-z) blow up under an O(1) random z before training begins.
    out_scale_init: float = 1.0

    def layer_dims(self):
        return (self.input_dim, *self.hidden_dims, self.output_dim)


class Mlp:
    """One feedforward network; owns its trainables and running statistics."""

    def __init__(self, config, seed, stream, base_tag):
        self.config = config
        dims = config.layer_dims()
        self.weights = [
            T.parameter(xavier_uniform(seed, stream, base_tag + i, dims[i], dims[i + 1]))
            for i in range(len(dims) - 1)
        ]
        self.bn_scales = []
        self.bn_shifts = []
        self.running_means = []
        self.running_vars = []
        # running stats are adopted from the first training batch rather than
        # a fixed (0, 1) prior: with a momentum prior, eval-mode outputs chase
        # the training statistics only geometrically, and for layers whose
        # input is a constant batch (the value head always sees the start
        # point) the shrinking running variance turns the leftover mean
        # mismatch into a divergent normalization
        self.stats_ready = []
        self.out_scale = None
        self.out_shift = None
        if config.batchnorm:
            for h in config.hidden_dims:
                self.bn_scales.append(T.parameter(np.ones(h)))
                self.bn_shifts.append(T.parameter(np.zeros(h)))
                self.running_means.append(np.zeros(h))
                self.running_vars.append(np.ones(h))
                self.stats_ready.append(False)
            self.out_scale = T.parameter(
                np.full(config.output_dim, float(config.out_scale_init)))
            self.out_shift = T.parameter(np.zeros(config.output_dim))

    def parameters(self):
        params = []
        for i, w in enumerate(self.weights[:-1]):
            params.append(w)
            if self.config.batchnorm:
                params.append(self.bn_scales[i])
                params.append(self.bn_shifts[i])
        params.append(self.weights[-1])
        if self.config.batchnorm:
            params.append(self.out_scale)
            params.append(self.out_shift)
        return params

    def forward(self, x, training, update_stats=None):
        """Run the network. `training` selects batch-statistic normalization;
        `update_stats` (default: same as `training`) controls whether that
        pass also folds the batch statistics into the running averages, so a
        read-only batch-statistic evaluation is possible."""
        cfg = self.config
        if update_stats is None:
            update_stats = training
        h = x
        for i in range(len(self.weights) - 1):
            h = T.matmul(h, self.weights[i])
            if cfg.batchnorm:
                if training:
                    h, mu, var = T.batchnorm_train(h, self.bn_scales[i], self.bn_shifts[i], cfg.bn_eps)
                    if not update_stats:
                        pass
                    elif self.stats_ready[i]:
                        m = cfg.bn_momentum
                        self.running_means[i] = m * self.running_means[i] + (1.0 - m) * mu
                        self.running_vars[i] = m * self.running_vars[i] + (1.0 - m) * var
                    else:
                        self.running_means[i] = mu.copy()
                        self.running_vars[i] = var.copy()
                        self.stats_ready[i] = True
                elif not self.stats_ready[i]:
                    # never trained: fall back to this batch's own statistics
                    h = T.batchnorm_eval(
                        h, self.bn_scales[i], self.bn_shifts[i],
                        h.data.mean(axis=0), h.data.var(axis=0), cfg.bn_eps,
                    )
                else:
                    h = T.batchnorm_eval(
                        h, self.bn_scales[i], self.bn_shifts[i],
                        self.running_means[i], self.running_vars[i], cfg.bn_eps,
                    )
            h = T.relu(h)
        h = T.matmul(h, self.weights[-1])
        if cfg.batchnorm:
            h = h * self.out_scale + self.out_shift
        return h

    def state_dict(self):
        state = {f"w{i}": w.data.copy() for i, w in enumerate(self.weights)}
        if self.config.batchnorm:
            for i in range(len(self.config.hidden_dims)):
                state[f"bn{i}_scale"] = self.bn_scales[i].data.copy()
                state[f"bn{i}_shift"] = self.bn_shifts[i].data.copy()
                state[f"bn{i}_mean"] = self.running_means[i].copy()
                state[f"bn{i}_var"] = self.running_vars[i].copy()
                state[f"bn{i}_ready"] = np.array(self.stats_ready[i])
            state["out_scale"] = self.out_scale.data.copy()
            state["out_shift"] = self.out_shift.data.copy()
        return state

    def load_state_dict(self, state):
        expected = set(self.state_dict())
        got = set(state)
        if expected != got:
            raise ValueError(
                f"state keys mismatch: missing {sorted(expected - got)}, unexpected {sorted(got - expected)}"
            )
        for i, w in enumerate(self.weights):
            w.data = self._taken(state, f"w{i}", w.data)
        if self.config.batchnorm:
            for i in range(len(self.config.hidden_dims)):
                self.bn_scales[i].data = self._taken(state, f"bn{i}_scale", self.bn_scales[i].data)
                self.bn_shifts[i].data = self._taken(state, f"bn{i}_shift", self.bn_shifts[i].data)
                self.running_means[i] = self._taken(state, f"bn{i}_mean", self.running_means[i])
                self.running_vars[i] = self._taken(state, f"bn{i}_var", self.running_vars[i])
                self.stats_ready[i] = bool(np.asarray(state[f"bn{i}_ready"]))
            self.out_scale.data = self._taken(state, "out_scale", self.out_scale.data)
            self.out_shift.data = self._taken(state, "out_shift", self.out_shift.data)

    @staticmethod
    def _assign(current, new, name):
        new = np.asarray(new)
        if new.shape != current.shape:
            raise ValueError(f"{name}: shape {new.shape} does not match {current.shape}")

    @classmethod
    def _taken(cls, state, name, current):
        cls._assign(current, state[name], name)
        return np.asarray(state[name], dtype=np.float64).copy()


def count_parameters(params):
    """Total scalar count over trainable tensors (running stats excluded)."""
    return int(sum(p.data.size for p in params))


class Adam:
    """Adam with bias correction over a fixed parameter list.

    step() consumes gradients (a missing gradient counts as zero) and clears
    them afterwards, so one tape/backward per step is the whole protocol.
    """

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else 0.0
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * (g * g)
            p.data = p.data - self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            p.grad = None


def save_checkpoint(path, states, meta=None):
    """Write named state dicts plus a json meta blob to a versioned npz."""
    arrays = {"__version__": np.array(CHECKPOINT_VERSION)}
    for name, sd in states.items():
        for key, value in sd.items():
            arrays[f"{name}/{key}"] = value
    blob = json.dumps(meta or {}, sort_keys=True).encode()
    arrays["__meta__"] = np.frombuffer(blob, dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path):
    """Inverse of save_checkpoint -> (states, meta)."""
    with np.load(path) as z:
        version = int(z["__version__"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})")
        meta = json.loads(bytes(z["__meta__"].tobytes()).decode())
        states = {}
        for key in z.files:
            if key.startswith("__"):
                continue
            name, field_key = key.split("/", 1)
            states.setdefault(name, {})[field_key] = z[key]
    return states, meta
