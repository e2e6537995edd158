"""Counter-based random number generation.

Every random draw in the package is addressed, not streamed: the value at a
grid position is a pure function of (seed, stream, tag, row, column) through a
Philox4x32-10 block cipher. Batches can therefore be generated in any order,
in parallel, or regenerated per slot, and the result never changes.

Counter layout (four 32-bit words):

    c0 = column block | attempt << 20      (two values per block)
    c1 = row index (sample / path / matrix id)
    c2 = tag (training iteration, chunk id, network id, ...)
    c3 = stream id (which subsystem is drawing)

The 64-bit key is the user seed. Uniforms map a 64-bit word to the open
interval (0, 1) via ((bits >> 11) + 0.5) * 2^-53; the one mantissa pattern
whose tie-to-even rounding would land on 1.0 exactly is clamped down to the
largest double below 1, so 0 and 1 never occur.
Normals use the Marsaglia polar method; rejected attempts re-key the same
block with an incremented attempt counter, so the accept/reject pattern is
itself deterministic and identical across backends.

The numba and numpy implementations share every arithmetic step. Integer
output is bitwise identical between them; float output can differ only by the
rounding of libm log (at most a few ulp).
"""

import numpy as np

from .backend import njit, use_numba

# Philox4x32 round constants
_M0 = 0xD2511F53
_M1 = 0xCD9E8D57
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_MASK = 0xFFFFFFFF

_ROUNDS = 10

# stream ids; keep unique per drawing subsystem
STREAM_PATHS = 0
STREAM_INIT = 1
STREAM_DBSDE_INIT = 2
STREAM_ORACLE = 3
STREAM_BRANCH = 4
STREAM_BRANCH_FALLBACK = 5

_MAX_COLS = 1 << 21  # block index must fit in 20 bits

_BELOW_ONE = 1.0 - 2.0**-53  # largest double strictly below 1


def split_seed(seed: int) -> tuple[int, int]:
    """Fold a python int seed into the two 32-bit Philox key words."""
    s = seed & 0xFFFFFFFFFFFFFFFF
    return s & _MASK, (s >> 32) & _MASK


def philox4_py(k0, k1, c0, c1, c2, c3):
    """Pure-python reference of one Philox4x32-10 block. Returns 4 uint32."""
    x0, x1, x2, x3 = c0 & _MASK, c1 & _MASK, c2 & _MASK, c3 & _MASK
    for r in range(_ROUNDS):
        key0 = (k0 + r * _W0) & _MASK
        key1 = (k1 + r * _W1) & _MASK
        p0 = _M0 * x0
        p1 = _M1 * x2
        hi0, lo0 = (p0 >> 32) & _MASK, p0 & _MASK
        hi1, lo1 = (p1 >> 32) & _MASK, p1 & _MASK
        x0, x1, x2, x3 = hi1 ^ x1 ^ key0, lo1, hi0 ^ x3 ^ key1, lo0
    return x0, x1, x2, x3


def uniform_from_u64_py(u: int) -> float:
    # (bits + 0.5) * 2^-53 rounds to 1.0 for the all-ones mantissa; clamp it
    return min(((u >> 11) + 0.5) * 2.0**-53, _BELOW_ONE)


# ---------------------------------------------------------------------------
# numba scalar core (also runs as plain python when numba is unavailable)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _philox4(k0, k1, c0, c1, c2, c3):
    x0 = np.uint64(c0)
    x1 = np.uint64(c1)
    x2 = np.uint64(c2)
    x3 = np.uint64(c3)
    mask = np.uint64(_MASK)
    m0 = np.uint64(_M0)
    m1 = np.uint64(_M1)
    key0 = np.uint64(k0)
    key1 = np.uint64(k1)
    for _ in range(_ROUNDS):
        p0 = m0 * x0
        p1 = m1 * x2
        hi0 = p0 >> np.uint64(32)
        lo0 = p0 & mask
        hi1 = p1 >> np.uint64(32)
        lo1 = p1 & mask
        x0 = (hi1 ^ x1 ^ key0) & mask
        x1 = lo1
        x2 = (hi0 ^ x3 ^ key1) & mask
        x3 = lo0
        key0 = (key0 + np.uint64(_W0)) & mask
        key1 = (key1 + np.uint64(_W1)) & mask
    return x0, x1, x2, x3


@njit(cache=True)
def _block_u64(k0, k1, c0, c1, c2, c3):
    y0, y1, y2, y3 = _philox4(k0, k1, c0, c1, c2, c3)
    return (y0 << np.uint64(32)) | y1, (y2 << np.uint64(32)) | y3


@njit(cache=True)
def _to_uniform(u):
    r = (np.float64(u >> np.uint64(11)) + 0.5) * 2.0**-53
    return min(r, _BELOW_ONE)


@njit(cache=True)
def uniform_pair(k0, k1, c0, c1, c2, c3):
    """Two uniforms in (0,1) from one counter block (njit-callable)."""
    a, b = _block_u64(k0, k1, c0, c1, c2, c3)
    return _to_uniform(a), _to_uniform(b)


@njit(cache=True)
def normal_pair(k0, k1, block, c1, c2, c3):
    """Two standard normals via the polar method.

    Rejected attempts reuse the block with the attempt index in the high bits
    of c0, so the draw is a pure function of the counter and never consumes
    neighbouring blocks.
    """
    attempt = np.uint64(0)
    shift = np.uint64(20)
    base = np.uint64(block)
    while True:
        ua, ub = uniform_pair(k0, k1, base | (attempt << shift), c1, c2, c3)
        u = 2.0 * ua - 1.0
        v = 2.0 * ub - 1.0
        s = u * u + v * v
        if s < 1.0:
            f = np.sqrt(-2.0 * np.log(s) / s)
            return u * f, v * f
        attempt += np.uint64(1)


@njit(cache=True, parallel=False)
def _fill_normals_nb(out, k0, k1, stream, tag, row_offset, n_rows, n_cols):
    n_blocks = (n_cols + 1) // 2
    for i in range(n_rows):
        c1 = np.uint64(row_offset + i)
        for j in range(n_blocks):
            za, zb = normal_pair(k0, k1, np.uint64(j), c1, np.uint64(tag), np.uint64(stream))
            out[i, 2 * j] = za
            if 2 * j + 1 < n_cols:
                out[i, 2 * j + 1] = zb


@njit(cache=True)
def _fill_uniforms_nb(out, k0, k1, stream, tag, row_offset, n_rows, n_cols):
    n_blocks = (n_cols + 1) // 2
    for i in range(n_rows):
        c1 = np.uint64(row_offset + i)
        for j in range(n_blocks):
            ua, ub = uniform_pair(k0, k1, np.uint64(j), c1, np.uint64(tag), np.uint64(stream))
            out[i, 2 * j] = ua
            if 2 * j + 1 < n_cols:
                out[i, 2 * j + 1] = ub


# ---------------------------------------------------------------------------
# numpy vectorized core
# ---------------------------------------------------------------------------


def _philox4_np(c0, c1, c2, c3, k0, k1):
    """Vectorized Philox4x32-10 over uint32 counter arrays."""
    u64 = np.uint64
    mask = u64(_MASK)
    x0 = c0.astype(np.uint64)
    x1 = c1.astype(np.uint64)
    x2 = c2.astype(np.uint64)
    x3 = c3.astype(np.uint64)
    for r in range(_ROUNDS):
        key0 = u64((k0 + r * _W0) & _MASK)
        key1 = u64((k1 + r * _W1) & _MASK)
        p0 = u64(_M0) * x0
        p1 = u64(_M1) * x2
        hi0 = p0 >> u64(32)
        lo0 = p0 & mask
        hi1 = p1 >> u64(32)
        lo1 = p1 & mask
        x0 = (hi1 ^ x1 ^ key0) & mask
        x1 = lo1
        x2 = (hi0 ^ x3 ^ key1) & mask
        x3 = lo0
    return x0, x1, x2, x3


def _uniform_np(u64arr):
    r = ((u64arr >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return np.minimum(r, _BELOW_ONE)


def _block_uniforms_np(c0, c1, c2, c3, k0, k1):
    y0, y1, y2, y3 = _philox4_np(c0, c1, c2, c3, k0, k1)
    a = (y0 << np.uint64(32)) | y1
    b = (y2 << np.uint64(32)) | y3
    return _uniform_np(a), _uniform_np(b)


def _polar_np(c0_base, c1, c2, c3, k0, k1):
    """Vectorized polar normals, one pair per explicit counter entry."""
    total = c0_base.size
    za = np.empty(total)
    zb = np.empty(total)
    pending = np.arange(total)
    attempt = np.uint64(0)
    while pending.size:
        c0 = c0_base[pending] | (attempt << np.uint64(20))
        ua, ub = _block_uniforms_np(c0, c1[pending], c2[pending], c3[pending], k0, k1)
        u = 2.0 * ua - 1.0
        v = 2.0 * ub - 1.0
        s = u * u + v * v
        ok = s < 1.0
        acc = pending[ok]
        f = np.sqrt(-2.0 * np.log(s[ok]) / s[ok])
        za[acc] = u[ok] * f
        zb[acc] = v[ok] * f
        pending = pending[~ok]
        attempt += np.uint64(1)
    return za, zb


def _fill_normals_np(out, k0, k1, stream, tag, row_offset, n_rows, n_cols):
    n_blocks = (n_cols + 1) // 2
    total = n_rows * n_blocks
    idx = np.arange(total, dtype=np.uint64)
    c0_base = (idx % n_blocks).astype(np.uint64)
    c1 = (idx // n_blocks + np.uint64(row_offset)).astype(np.uint64)
    c2 = np.full(total, tag, dtype=np.uint64)
    c3 = np.full(total, stream, dtype=np.uint64)
    za, zb = _polar_np(c0_base, c1, c2, c3, k0, k1)
    grid = np.empty((n_rows, 2 * n_blocks))
    grid[:, 0::2] = za.reshape(n_rows, n_blocks)
    grid[:, 1::2] = zb.reshape(n_rows, n_blocks)
    out[:] = grid[:, :n_cols]


def normals_for_counters(k0, k1, rows, tags, stream, n_cols, base_block=0):
    """Normals addressed per entry: row i uses (c1=rows[i], c2=tags[i]).

    Vectorized numpy path for callers whose row/tag pairs are irregular
    (the branching oracle addresses draws by particle identity, not by grid
    position). Column j lives in counter block base_block + j // 2.
    """
    n = rows.size
    n_blocks = (n_cols + 1) // 2
    if n == 0 or n_cols == 0:
        return np.empty((n, n_cols))
    c0_base = np.tile(np.arange(n_blocks, dtype=np.uint64) + np.uint64(base_block), n)
    c1 = np.repeat(rows.astype(np.uint64), n_blocks)
    c2 = np.repeat(tags.astype(np.uint64) & np.uint64(_MASK), n_blocks)
    c3 = np.full(n * n_blocks, stream, dtype=np.uint64)
    za, zb = _polar_np(c0_base, c1, c2, c3, k0, k1)
    grid = np.empty((n, 2 * n_blocks))
    grid[:, 0::2] = za.reshape(n, n_blocks)
    grid[:, 1::2] = zb.reshape(n, n_blocks)
    return grid[:, :n_cols]


def uniforms_for_counters(k0, k1, rows, tags, stream, block=0):
    """One uniform pair per (rows[i], tags[i]) entry at a fixed block."""
    n = rows.size
    c0 = np.full(n, block, dtype=np.uint64)
    c1 = rows.astype(np.uint64)
    c2 = tags.astype(np.uint64) & np.uint64(_MASK)
    c3 = np.full(n, stream, dtype=np.uint64)
    return _block_uniforms_np(c0, c1, c2, c3, k0, k1)


def _fill_uniforms_np(out, k0, k1, stream, tag, row_offset, n_rows, n_cols):
    n_blocks = (n_cols + 1) // 2
    j = np.arange(n_blocks, dtype=np.uint64)
    rows = np.arange(n_rows, dtype=np.uint64) + np.uint64(row_offset)
    c0 = np.broadcast_to(j, (n_rows, n_blocks)).ravel()
    c1 = np.repeat(rows, n_blocks)
    c2 = np.full(c0.size, tag, dtype=np.uint64)
    c3 = np.full(c0.size, stream, dtype=np.uint64)
    ua, ub = _block_uniforms_np(c0.astype(np.uint64), c1, c2, c3, k0, k1)
    grid = np.empty((n_rows, 2 * n_blocks))
    grid[:, 0::2] = ua.reshape(n_rows, n_blocks)
    grid[:, 1::2] = ub.reshape(n_rows, n_blocks)
    out[:] = grid[:, :n_cols]


# ---------------------------------------------------------------------------
# public grid API
# ---------------------------------------------------------------------------


def _check_dims(n_rows, n_cols):
    if n_rows < 0 or n_cols < 0:
        raise ValueError("grid dimensions must be non-negative")
    if n_cols > _MAX_COLS:
        raise ValueError(f"n_cols {n_cols} exceeds the {_MAX_COLS} addressing limit")


def normals_grid(seed, stream, tag, n_rows, n_cols, row_offset=0):
    """Standard-normal grid keyed by (seed, stream, tag, row, column)."""
    _check_dims(n_rows, n_cols)
    k0, k1 = split_seed(seed)
    out = np.empty((n_rows, n_cols))
    if n_rows == 0 or n_cols == 0:
        return out
    if use_numba():
        _fill_normals_nb(out, np.uint64(k0), np.uint64(k1), stream, tag, row_offset, n_rows, n_cols)
    else:
        _fill_normals_np(out, k0, k1, stream, tag, row_offset, n_rows, n_cols)
    return out


def uniforms_grid(seed, stream, tag, n_rows, n_cols, row_offset=0):
    """Uniform(0,1) grid keyed by (seed, stream, tag, row, column)."""
    _check_dims(n_rows, n_cols)
    k0, k1 = split_seed(seed)
    out = np.empty((n_rows, n_cols))
    if n_rows == 0 or n_cols == 0:
        return out
    if use_numba():
        _fill_uniforms_nb(out, np.uint64(k0), np.uint64(k1), stream, tag, row_offset, n_rows, n_cols)
    else:
        _fill_uniforms_np(out, k0, k1, stream, tag, row_offset, n_rows, n_cols)
    return out
