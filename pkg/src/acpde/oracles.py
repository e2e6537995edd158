"""Independent reference values for u(0, xi).

Three mechanisms, none sharing code with the solver:

  * a log-transform Monte Carlo estimate for the control problem, computed
    in log-sum-exp form with a delta-method standard error,
  * a weighted Galton-Watson particle system for the bistable reaction
    problem (every particle diffuses, branches at exponential times into k
    offspring carrying a signed weight, and the estimator is the mean of the
    per-tree product of weights and terminal values),
  * closed forms for the three problems that have one, served only after the
    expression passes a numerical PDE-residual check.

All sampling is addressed through the counter RNG: Monte Carlo rows by
(sample index), branching draws by (tree index, particle node id), so
results are independent of chunking and identical across backends up to
libm rounding.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import philox
from .backend import njit, use_numba
from .philox import (
    STREAM_BRANCH,
    STREAM_ORACLE,
    normal_pair,
    normals_grid,
    split_seed,
    uniform_pair,
)

_MIN_SAMPLES = 10**4
_MAX_SAMPLES = 2**31  # sample index must fit a counter word
_CHUNK = 8192
_GROWTH_BOUND = 5.0
_RESIDUAL_TOL = 1e-8

_HJB_TAG = 0
_PLAIN_TAG = 1
_RESIDUAL_TAG = 2


@dataclass
class OracleResult:
    value: float
    stderr: float
    samples_used: int
    method: str

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"oracle produced a non-finite value: {self.value}")
        if self.stderr < 0:
            raise ValueError(f"negative standard error: {self.stderr}")

    def as_dict(self):
        return {
            "value": self.value,
            "stderr": self.stderr,
            "samples_used": self.samples_used,
            "method": self.method,
        }


def _check_mc_args(risk_aversion, samples):
    if risk_aversion is not None and risk_aversion <= 0:
        raise ValueError(f"risk aversion must be positive, got {risk_aversion}")
    if samples < _MIN_SAMPLES:
        raise ValueError(f"need at least {_MIN_SAMPLES} samples, got {samples}")
    if samples > _MAX_SAMPLES:
        raise ValueError(f"sample count {samples} exceeds the {_MAX_SAMPLES} limit")


def _chunks(samples):
    start = 0
    while start < samples:
        yield start, min(_CHUNK, samples - start)
        start += _CHUNK


def hjb_reference(terminal, total_time, risk_aversion, x, samples, seed,
                  sigma0=math.sqrt(2.0)):
    """-(1/lam) log E[exp(-lam g(x + sigma0 W_T))], streamed in log space."""
    _check_mc_args(risk_aversion, samples)
    x = np.asarray(x, dtype=float)
    lam = float(risk_aversion)
    if total_time == 0.0:
        return OracleResult(float(terminal(x[None, :])[0, 0]), 0.0, 0, "log_transform_mc")
    scale = sigma0 * math.sqrt(total_time)
    log_parts, log_parts_sq = [], []
    for start, n in _chunks(samples):
        eps = normals_grid(seed, STREAM_ORACLE, _HJB_TAG, n, x.size, row_offset=start)
        y = -lam * terminal(x[None, :] + scale * eps).ravel()
        log_parts.append(logsumexp(y))
        log_parts_sq.append(logsumexp(2.0 * y))
    l1 = logsumexp(log_parts)
    l2 = logsumexp(log_parts_sq)
    log_m = math.log(samples)
    value = -(l1 - log_m) / lam
    # delta method on the log of a sample mean
    rel_var = math.expm1(min(l2 + log_m - 2.0 * l1, 700.0))
    stderr = math.sqrt(max(rel_var, 0.0) / samples) / lam
    return OracleResult(value, stderr, samples, "log_transform_mc")


def plain_mc_reference(terminal, total_time, x, samples, seed,
                       sigma0=math.sqrt(2.0)):
    """Direct E[g(x + sigma0 W_T)] with the usual standard error."""
    _check_mc_args(None, samples)
    x = np.asarray(x, dtype=float)
    if total_time == 0.0:
        return OracleResult(float(terminal(x[None, :])[0, 0]), 0.0, 0, "plain_mc")
    scale = sigma0 * math.sqrt(total_time)
    total = total_sq = 0.0
    for start, n in _chunks(samples):
        eps = normals_grid(seed, STREAM_ORACLE, _PLAIN_TAG, n, x.size, row_offset=start)
        g = terminal(x[None, :] + scale * eps).ravel()
        total += g.sum()
        total_sq += (g * g).sum()
    mean = total / samples
    var = max(total_sq - samples * mean * mean, 0.0) / (samples - 1)
    return OracleResult(mean, math.sqrt(var / samples), samples, "plain_mc")


# ---------------------------------------------------------------------------
# branching diffusion
# ---------------------------------------------------------------------------


def decomposition_driver(y, rate, powers, probs, weights):
    """The nonlinearity represented by a branching decomposition:

        rate * (sum_k p_k w_k y^k - y)

    The exponential-clock discount supplies the -rate*y term, which is why
    the particle products need no survival normalization.
    """
    y = np.asarray(y, dtype=float)
    acc = np.zeros_like(y)
    for k, p, w in zip(powers, probs, weights):
        acc = acc + p * w * y**k
    return rate * (acc - y)


def _check_decomposition(rate, powers, probs, weights, total_time):
    if not (len(powers) == len(probs) == len(weights)):
        raise ValueError("powers, probs and weights must have equal length")
    if rate <= 0:
        raise ValueError(f"branching rate must be positive, got {rate}")
    if any(p <= 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-12:
        raise ValueError(f"offspring probabilities must be positive and sum to 1, got {probs}")
    if any(int(k) != k or k < 0 for k in powers):
        raise ValueError(f"offspring counts must be non-negative integers, got {powers}")
    growth = rate * (max(powers) - 1) * total_time
    if growth > _GROWTH_BOUND:
        raise ValueError(
            "expected particle count grows like exp(rate*(k_max-1)*T) = "
            f"exp({growth:.3f}); refusing above the bound exp({_GROWTH_BOUND})"
        )


@njit(cache=True)
def _ac_terminal_point(pos):
    s = 0.0
    for j in range(pos.size):
        s += pos[j] * pos[j]
    return 1.0 / (2.0 + 0.4 * s)


def _ac_terminal_rows(x):
    return 1.0 / (2.0 + 0.4 * (x * x).sum(axis=1))


_MASK32 = 0xFFFFFFFF
_STACK_CAP = 512  # depth-first stack; holds ~2*depth+1 particles


@njit(cache=True)
def _branch_chunk_nb(k0, k1, x0, total_time, rate, sigma, powers, cumprobs,
                     weights, root_start, products):
    d = x0.size
    n_blocks = (d + 1) // 2
    kmax = 0
    for i in range(powers.size):
        kmax = max(kmax, powers[i])
    node_ids = np.empty(_STACK_CAP, np.int64)
    births = np.empty(_STACK_CAP)
    positions = np.empty((_STACK_CAP, d))
    cur = np.empty(d)
    overflow = 0
    for r in range(products.size):
        root = np.uint64(root_start + r)
        top = 0
        node_ids[0] = 0
        births[0] = 0.0
        for j in range(d):
            positions[0, j] = x0[j]
        product = 1.0
        bad = False
        while top >= 0:
            node = np.uint64(node_ids[top] & _MASK32)
            birth = births[top]
            for j in range(d):
                cur[j] = positions[top, j]
            child_base = node_ids[top] * kmax
            top -= 1
            u_tau, u_k = uniform_pair(k0, k1, np.uint64(0), root, node,
                                      np.uint64(STREAM_BRANCH))
            tau = -math.log(u_tau) / rate
            remaining = total_time - birth
            step = remaining if tau >= remaining else tau
            scale = sigma * math.sqrt(step)
            for b in range(n_blocks):
                za, zb = normal_pair(k0, k1, np.uint64(b + 1), root, node,
                                     np.uint64(STREAM_BRANCH))
                cur[2 * b] += scale * za
                if 2 * b + 1 < d:
                    cur[2 * b + 1] += scale * zb
            if tau >= remaining:
                product *= _ac_terminal_point(cur)
            else:
                idx = 0
                while u_k > cumprobs[idx]:
                    idx += 1
                product *= weights[idx]
                k = powers[idx]
                if top + k >= _STACK_CAP:
                    bad = True
                    break
                for j in range(k):
                    top += 1
                    node_ids[top] = child_base + 1 + j
                    births[top] = birth + tau
                    for c in range(d):
                        positions[top, c] = cur[c]
        if bad:
            overflow += 1
            products[r] = np.nan
        else:
            products[r] = product
    return overflow


def _branch_chunk_np(k0, k1, x0, total_time, rate, sigma, powers, cumprobs,
                     weights, root_start, n_roots):
    d = x0.size
    kmax = int(powers.max())
    products = np.ones(n_roots)
    roots = np.arange(root_start, root_start + n_roots, dtype=np.uint64)
    rel = np.arange(n_roots)
    nodes = np.zeros(n_roots, dtype=np.int64)
    births = np.zeros(n_roots)
    pos = np.tile(x0, (n_roots, 1))
    generations = 0
    while rel.size:
        generations += 1
        if generations > 10000:
            raise RuntimeError("branching particle system failed to die out")
        u_tau, u_k = philox.uniforms_for_counters(k0, k1, roots, nodes,
                                                  STREAM_BRANCH, block=0)
        tau = -np.log(u_tau) / rate
        remaining = total_time - births
        leaf = tau >= remaining
        step = np.where(leaf, remaining, tau)
        eps = philox.normals_for_counters(k0, k1, roots, nodes, STREAM_BRANCH,
                                          d, base_block=1)
        pos = pos + (sigma * np.sqrt(step))[:, None] * eps
        np.multiply.at(products, rel[leaf], _ac_terminal_rows(pos[leaf]))
        keep = ~leaf
        if not keep.any():
            break
        idx = np.searchsorted(cumprobs, u_k[keep], side="left")
        np.multiply.at(products, rel[keep], weights[idx])
        counts = powers[idx]
        parent = np.repeat(np.arange(idx.size), counts)
        sibling = np.arange(parent.size) - np.repeat(
            np.cumsum(counts) - counts, counts)
        roots = roots[keep][parent]
        rel = rel[keep][parent]
        nodes = nodes[keep][parent] * kmax + 1 + sibling
        births = (births[keep] + tau[keep])[parent]
        pos = pos[keep][parent]
    return products


def allen_cahn_reference(total_time, x, samples, seed, rate=1.0,
                         powers=(1, 3), probs=(0.5, 0.5), weights=(4.0, -2.0),
                         sigma0=math.sqrt(2.0)):
    """Branching-diffusion estimate of the bistable reaction problem.

    The defaults decompose f(y) = y - y^3 as rate*(sum_k p_k w_k y^k - y);
    see decomposition_driver for the identity the constants must satisfy.
    """
    _check_mc_args(None, samples)
    _check_decomposition(rate, powers, probs, weights, total_time)
    x = np.asarray(x, dtype=float)
    k0, k1 = split_seed(seed)
    powers_arr = np.asarray(powers, dtype=np.int64)
    cumprobs = np.cumsum(np.asarray(probs, dtype=float))
    cumprobs[-1] = 1.0  # guard the final bin against rounding
    weights_arr = np.asarray(weights, dtype=float)
    total = total_sq = 0.0
    for start, n in _chunks(samples):
        if use_numba():
            products = np.empty(n)
            overflow = _branch_chunk_nb(
                np.uint64(k0), np.uint64(k1), x, total_time, rate, sigma0,
                powers_arr, cumprobs, weights_arr, start, products)
            if overflow:
                raise RuntimeError(
                    f"{overflow} particle trees overflowed the stack capacity {_STACK_CAP}")
        else:
            products = _branch_chunk_np(k0, k1, x, total_time, rate, sigma0,
                                        powers_arr, cumprobs, weights_arr, start, n)
        total += products.sum()
        total_sq += (products * products).sum()
    mean = total / samples
    var = max(total_sq - samples * mean * mean, 0.0) / (samples - 1)
    return OracleResult(mean, math.sqrt(var / samples), samples, "branching")


# ---------------------------------------------------------------------------
# verified closed forms
# ---------------------------------------------------------------------------


def closed_form_residual(problem, points=256, seed=0):
    """Max |u_t + half_trace + f| of the candidate closed form at random
    interior points; zero drift is assumed (true for every analytic problem)."""
    d = problem.d
    u = philox.uniforms_grid(seed, STREAM_ORACLE, _RESIDUAL_TAG, points, d + 1)
    t = u[:, :1] * 0.999 * problem.total_time
    x = 2.0 * u[:, 1:] - 1.0
    worst = 0.0
    for i in range(points):
        ti = float(t[i, 0])
        xi = x[i : i + 1]
        ui, u_t, grad, half_trace = problem.exact_partials(ti, xi)
        z = problem.diffusion_transpose_factor(ti, xi) * grad
        res = u_t + half_trace + problem.generator_np(ti, xi, ui, z)
        worst = max(worst, float(np.abs(res).max()))
    return worst


def analytic_reference(problem, t=0.0, x=None):
    """Serve the closed form, but only after it survives the residual check."""
    if not problem.has_exact:
        raise ValueError(f"{problem.name} has no closed-form solution to serve")
    residual = closed_form_residual(problem)
    if residual > _RESIDUAL_TOL:
        raise ValueError(
            f"refusing to serve the {problem.name} closed form: PDE residual "
            f"{residual:.3e} exceeds {_RESIDUAL_TOL}"
        )
    if x is None:
        x = problem.start
    value = float(problem.exact_solution(float(t), np.asarray(x, dtype=float)[None, :])[0, 0])
    return OracleResult(value, 0.0, 0, "analytic")


def reference_for(problem, samples, seed):
    """Dispatch to the right oracle for a problem; None when there is none."""
    kind = problem.oracle_kind
    if kind is None:
        return None
    if kind == "log_mc":
        return hjb_reference(problem.terminal, problem.total_time,
                             problem.risk_aversion, problem.start, samples,
                             seed, sigma0=problem.sigma0)
    if kind == "branching":
        return allen_cahn_reference(problem.total_time, problem.start, samples,
                                    seed, sigma0=problem.sigma0)
    if kind == "analytic":
        return analytic_reference(problem)
    raise ValueError(f"unknown oracle kind {kind!r} on {problem.name}")
