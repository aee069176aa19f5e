"""Reproducible random variates: truncated normal, multivariate normal, Wishart.

Two uniform sources are supported by :func:`truncated_normal`:

* a :class:`numpy.random.Generator` (one stream per chain, obtained from
  :class:`RngStream` by PCG64 jump-ahead so streams never overlap);
* a :class:`CounterSource`, a counter-based generator that derives each
  element's uniforms from a hash of (element key, call counter). Element
  ``i``'s draws then depend only on its own key, so results do not change
  when elements are reordered.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

# Half-normal rejection is used below this standardized lower bound;
# exponential (or uniform) rejection above it.
TAIL_SWITCH = 0.47
# Normal rejection for mode-containing intervals at least this wide,
# uniform rejection otherwise.
WIDE_INTERVAL = np.sqrt(2.0 * np.pi)
# Half-normal rejection only when the interval is at least this wide.
HALF_NORMAL_WIDTH = np.sqrt(np.pi / 2.0)

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_TWO53 = float(2**53)
_S30, _S27, _S31, _S11 = (np.uint64(k) for k in (30, 27, 31, 11))
# Proposals evaluated per element and rejection round.
_CANDIDATES = 4


class SPDError(np.linalg.LinAlgError):
    """Matrix is not symmetric positive definite."""


def _mix64(x):
    """SplitMix64 finalizer on uint64 arrays (wrapping arithmetic)."""
    # array (not scalar) arithmetic wraps silently
    x = np.array(x, dtype=np.uint64, ndmin=1)
    x = (x ^ (x >> _S30)) * _M1
    x = (x ^ (x >> _S27)) * _M2
    return x ^ (x >> _S31)


def _to_unit(bits):
    """uint64 -> uniform on the open interval (0, 1)."""
    return ((bits >> _S11).astype(np.float64) + 0.5) / _TWO53


def string_key(text: str) -> int:
    """Stable 64-bit key of a string (platform independent)."""
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little")


def derive_key(*parts: int) -> int:
    """Hash a tuple of nonnegative integers into one 64-bit key."""
    h = np.array([0x6A09E667F3BCC908], dtype=np.uint64)
    for part in parts:
        h = _mix64(h ^ (np.array([part % 2**64], dtype=np.uint64) + _GOLDEN))
    return int(h[0])


@dataclass(frozen=True)
class RngStream:
    """A ``(seed, stream_id)`` pair naming one reproducible random stream."""

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed).jumped(self.stream_id))

    @property
    def key(self) -> int:
        return derive_key(self.seed, self.stream_id)


class CounterSource:
    """Counter-based uniforms keyed per element.

    The uniforms of element ``i`` in rejection round ``r`` are a hash of
    ``(keys[i], base, r)`` only.

    Parameters
    ----------
    keys : array of uint64
        One key per element.
    base : int
        Key of the context (chain stream, sweep, component).
    """

    def __init__(self, keys, base: int):
        self.keys = np.asarray(keys, dtype=np.uint64)
        self.base = np.array([base % 2**64], dtype=np.uint64)

    def uniform(self, idx, k, round_=0):
        h = _mix64(self.base + _GOLDEN * np.array([round_ + 1], dtype=np.uint64))
        x = _mix64(self.keys[idx] ^ h)
        slots = _GOLDEN * np.arange(1, k + 1, dtype=np.uint64)
        return _to_unit(_mix64(x[:, None] + slots[None, :]))


class GeneratorSource:
    """Adapter giving a numpy Generator the ``uniform(idx, k, round_)`` interface."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def uniform(self, idx, k, round_=0):
        bits = self.rng.integers(0, 2**63, size=(len(idx), k), dtype=np.uint64, endpoint=False)
        return _to_unit(bits << np.uint64(1))


def _as_source(rng):
    if isinstance(rng, (CounterSource, GeneratorSource)):
        return rng
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    return GeneratorSource(rng)


def _robert_uniform_limit(a):
    """Width below which uniform rejection beats exponential rejection for a >= 0."""
    r = np.sqrt(a * a + 4.0)
    return 2.0 / (a + r) * np.exp((a * a - a * r) / 4.0 + 0.5)


# proposal families
_NORMAL, _UNIFORM_MODE, _HALF_NORMAL, _EXPONENTIAL, _UNIFORM_TAIL = range(5)


def _select_method(a, b):
    """Proposal family for each standardized interval ``[a, b]`` with ``b > 0``."""
    width = b - a
    method = np.where(width >= WIDE_INTERVAL, _NORMAL, _UNIFORM_MODE)
    tail = a >= 0
    if tail.any():
        small_a = a < TAIL_SWITCH
        with np.errstate(over="ignore", invalid="ignore"):
            narrow = width < _robert_uniform_limit(np.where(small_a, 1.0, a))
        tail_method = np.where(
            small_a,
            np.where(width >= HALF_NORMAL_WIDTH, _HALF_NORMAL, _UNIFORM_TAIL),
            np.where(narrow, _UNIFORM_TAIL, _EXPONENTIAL),
        )
        method = np.where(tail, tail_method, method)
    return method


def _propose(code, a, b, lam, u, v):
    """Candidates and acceptance flags of one proposal family.

    ``a, b, lam`` are ``(n, 1)`` and ``u, v`` are ``(n, K)`` uniforms.
    """
    if code in (_NORMAL, _HALF_NORMAL):
        z = ndtri(u)
        if code == _HALF_NORMAL:
            z = np.abs(z)
        return z, (z >= a) & (z <= b)
    if code == _EXPONENTIAL:
        z = a - np.log(u) / lam
        return z, (z <= b) & (np.log(v) <= -0.5 * (z - lam) ** 2)
    z = a + (b - a) * u
    if code == _UNIFORM_MODE:
        return z, np.log(v) <= -0.5 * z * z
    return z, np.log(v) <= 0.5 * (a - z) * (a + z)


def _standard_truncated(a, b, source):
    """Exact draws from N(0, 1) restricted to [a, b], vectorized (a < b).

    Every pending element receives ``_CANDIDATES`` proposals per round from
    its family; the first accepted one is kept.
    """
    n = a.size
    flip = b <= 0
    a, b = np.where(flip, -b, a), np.where(flip, -a, b)
    method = _select_method(a, b)
    expo = method == _EXPONENTIAL
    lam = np.ones(n)
    lam[expo] = 0.5 * (a[expo] + np.sqrt(a[expo] ** 2 + 4.0))
    out = np.empty(n)
    K = _CANDIDATES
    # process elements grouped by family so each group is a contiguous slice
    idx = np.argsort(method, kind="stable")
    r = 0
    while idx.size:
        u = source.uniform(idx, 2 * K, r)
        mi = method[idx]
        ai, bi, li = a[idx, None], b[idx, None], lam[idx, None]
        z = np.empty((idx.size, K))
        ok = np.empty((idx.size, K), dtype=bool)
        edges = np.searchsorted(mi, np.arange(6))
        for code in range(5):
            g = slice(edges[code], edges[code + 1])
            if g.start < g.stop:
                z[g], ok[g] = _propose(code, ai[g], bi[g], li[g], u[g, :K], u[g, K:])
        first = np.argmax(ok, axis=1)
        rows = np.arange(idx.size)
        done = ok[rows, first]
        out[idx[done]] = z[rows[done], first[done]]
        idx = idx[~done]
        r += 1
    return np.where(flip, -out, out)


def truncated_normal(mean, sd, lo, hi, rng=None):
    """Draw from N(mean, sd^2) restricted to [lo, hi].

    Works elementwise on arrays. The sampler is exact: rejection from a
    normal, half-normal, uniform or translated exponential proposal chosen
    by the position and width of the standardized interval.

    Parameters
    ----------
    mean, sd, lo, hi : float or array
        ``lo < hi`` elementwise; bounds may be infinite.
    rng : Generator, CounterSource, int or None

    Returns
    -------
    float or ndarray
    """
    mean, sd, lo, hi = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (mean, sd, lo, hi)))
    scalar = mean.ndim == 0
    mean, sd, lo, hi = (np.atleast_1d(v).ravel() for v in (mean, sd, lo, hi))
    if np.any(~(lo < hi)):
        raise ValueError("truncation bounds need lo < hi")
    if np.any(~(sd > 0)) or not np.all(np.isfinite(sd)):
        raise ValueError("sd must be positive and finite")
    a = (lo - mean) / sd
    b = (hi - mean) / sd
    z = _standard_truncated(a, b, _as_source(rng))
    x = np.clip(mean + sd * z, lo, hi)
    return float(x[0]) if scalar else x


def mvn(mean, cov, rng=None):
    """One draw ``mean + L z`` with ``L`` the lower Cholesky factor of ``cov``."""
    mean = np.asarray(mean, dtype=float)
    try:
        L = np.linalg.cholesky(np.asarray(cov, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise SPDError("covariance is not symmetric positive definite") from exc
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return mean + L @ rng.standard_normal(mean.size)


def wishart(df, scale, rng=None):
    """Wishart draw by the Bartlett decomposition; ``E[W] = df * scale``."""
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    p = scale.shape[0]
    if df < p:
        raise ValueError(f"Wishart needs df >= dimension ({df} < {p})")
    try:
        L = np.linalg.cholesky(scale)
    except np.linalg.LinAlgError as exc:
        raise SPDError("Wishart scale is not symmetric positive definite") from exc
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    A = np.zeros((p, p))
    A[np.diag_indices(p)] = np.sqrt(rng.chisquare(df - np.arange(p)))
    low = np.tril_indices(p, -1)
    A[low] = rng.standard_normal(len(low[0]))
    LA = L @ A
    return LA @ LA.T


def std_normal(rng=None) -> float:
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return float(rng.standard_normal())
