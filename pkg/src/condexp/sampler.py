"""Binary digit splitting, Gaussianisation and quantile transforms.

One uniform u = sum_i 2^-i u[i] carries infinitely many independent uniforms:
channel k reads the digits at positions 2^(k-1) * (2i - 1), i = 1, 2, ...,
and these position sets partition the positive integers.  At precision B
bits channel k gets the positions that are <= B; with B = 64 channels 1..7
receive 32, 16, 8, 4, 2, 1, 1 bits.

Scalar functions take a :class:`BitSource`; the ``*_words`` variants work on
arrays of 64-bit words (B <= 64) through :mod:`condexp.kernels`.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import special, stats

from . import kernels

DEFAULT_BITS = 64
ALPHA = 0.01


class PrecisionError(ValueError):
    """Requested channel has no digit positions within the precision."""


def channel_positions(k: int, B: int) -> np.ndarray:
    """1-based digit positions 2^(k-1)(2i-1) <= B read by channel k."""
    if k < 1:
        raise PrecisionError(f"channel index must be >= 1, got {k}")
    step = 1 << (k - 1)
    if step > B:
        raise PrecisionError(f"channel {k} needs position {step} > B = {B}")
    return np.arange(step, B + 1, 2 * step)


def channel_bits(k: int, B: int = DEFAULT_BITS) -> int:
    return int(channel_positions(k, B).size)


def max_channels(B: int) -> int:
    return int(B).bit_length()


@dataclass(frozen=True)
class BitSource:
    """u in [0, 1) as B binary digits; ``bits[i-1]`` is u[i]."""

    bits: tuple[int, ...]

    def __post_init__(self):
        if not self.bits:
            raise PrecisionError("need at least one bit")
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError("bits must be 0 or 1")

    @property
    def B(self) -> int:
        return len(self.bits)

    @classmethod
    def from_int(cls, word: int, B: int = DEFAULT_BITS) -> "BitSource":
        """Big-endian digits of ``word``: the leading bit is u[1]."""
        word = int(word)
        if not 0 <= word < (1 << B):
            raise ValueError(f"word {word} does not fit in {B} bits")
        return cls(tuple((word >> (B - i)) & 1 for i in range(1, B + 1)))

    @classmethod
    def from_float(cls, u: float, B: int = DEFAULT_BITS) -> "BitSource":
        """First B digits of the terminating binary expansion of u."""
        if not 0.0 <= u < 1.0:
            raise ValueError(f"u = {u} is outside [0, 1)")
        return cls.from_int(int(Fraction(u) * (1 << B)), B)

    @classmethod
    def from_bits(cls, bits: Sequence[int]) -> "BitSource":
        return cls(tuple(int(b) for b in bits))

    @classmethod
    def random(cls, rng: np.random.Generator, B: int = DEFAULT_BITS) -> "BitSource":
        return cls(tuple(int(b) for b in rng.integers(0, 2, size=B)))

    @property
    def word(self) -> int:
        out = 0
        for b in self.bits:
            out = (out << 1) | b
        return out

    @property
    def value(self) -> Fraction:
        return Fraction(self.word, 1 << self.B)

    def __float__(self):
        return float(self.value)


def bit_split_exact(u: BitSource, k: int) -> Fraction:
    pos = channel_positions(k, u.B)
    acc = 0
    for p in pos:
        acc = (acc << 1) | u.bits[p - 1]
    return Fraction(acc, 1 << pos.size)


def bit_split(u: BitSource, k: int) -> float:
    """h_k(u) = sum_i 2^-i u[2^(k-1)(2i-1)] (positions <= B)."""
    return float(bit_split_exact(u, k))


def psi(u: BitSource, K: int) -> tuple[float, ...]:
    """(h_1(u), ..., h_K(u))."""
    _check_channels(K, u.B)
    return tuple(bit_split(u, k) for k in range(1, K + 1))


def _check_channels(K, B):
    if K < 1:
        raise PrecisionError("K must be >= 1")
    if K > max_channels(B):
        raise PrecisionError(f"{K} channels need position {1 << (K - 1)} > B = {B}")


# --------------------------------------------------------------------------
# normal cdf and quantile
# --------------------------------------------------------------------------

_SQRT2 = np.sqrt(2.0)
_SQRT2PI = np.sqrt(2.0 * np.pi)

# rational approximation coefficients (central and tail regions)
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def phi(x):
    """Standard normal cdf."""
    r = 0.5 * special.erfc(-np.asarray(x, dtype=float) / _SQRT2)
    return float(r) if np.ndim(r) == 0 else r


def _lower_quantile(p):
    """Quantile for p in (0, 0.5]: rational start plus one Halley step."""
    x = np.empty_like(p)
    tail = p < _P_LOW
    q = np.sqrt(-2.0 * np.log(p[tail]))
    x[tail] = ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
               / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    c = ~tail
    q = p[c] - 0.5
    r = q * q
    x[c] = ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
            / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0))
    e = 0.5 * special.erfc(-x / _SQRT2) - p
    u = e * _SQRT2PI * np.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def phi_inv(y):
    """Standard normal quantile on (0, 1); absolute error below 1e-9 on [1e-12, 1 - 1e-12]."""
    a = np.asarray(y, dtype=float)
    if not np.all((a > 0.0) & (a < 1.0)):
        bad = a.ravel()[~((a.ravel() > 0) & (a.ravel() < 1))][0]
        raise ValueError(f"phi_inv needs y in (0, 1), got {bad}")
    flat = a.ravel()
    out = np.empty_like(flat)
    low = flat <= 0.5
    out[low] = _lower_quantile(flat[low])
    # 1 - y is exact for y >= 0.5, so the upper half reflects without loss
    out[~low] = -_lower_quantile(1.0 - flat[~low])
    out = out.reshape(a.shape)
    return float(out) if out.ndim == 0 else out


def gaussianize(u: BitSource, K: int) -> tuple[float, ...]:
    """(phi_inv(h_1(u)), ..., phi_inv(h_K(u))); a zero channel is read as 2^-(B+1)."""
    h = np.array(psi(u, K))
    h[h == 0.0] = 2.0 ** -(u.B + 1)
    return tuple(float(g) for g in phi_inv(h))


# --------------------------------------------------------------------------
# vectorised word paths
# --------------------------------------------------------------------------

def random_words(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(0, np.iinfo(np.uint64).max, size=n, dtype=np.uint64, endpoint=True)


def split_words(words, K: int, B: int = DEFAULT_BITS) -> np.ndarray:
    """(n, K) array of h_1..h_K for B-bit words (the low B bits of each uint64)."""
    if not 1 <= B <= 64:
        raise PrecisionError("word paths need 1 <= B <= 64")
    _check_channels(K, B)
    words = np.ascontiguousarray(words, dtype=np.uint64)
    out = np.empty((words.size, K))
    for k in range(1, K + 1):
        ints = kernels.extract_channel(words, B, k)
        out[:, k - 1] = ints.astype(np.float64) / float(1 << channel_bits(k, B))
    return out


def channel_ints(words, k: int, B: int = DEFAULT_BITS) -> np.ndarray:
    channel_positions(k, B)
    return kernels.extract_channel(np.ascontiguousarray(words, dtype=np.uint64), B, k)


def gaussianize_words(words, K: int, B: int = DEFAULT_BITS) -> np.ndarray:
    h = split_words(words, K, B)
    h[h == 0.0] = 2.0 ** -(B + 1)
    return phi_inv(h)


@dataclass(frozen=True)
class Enumeration:
    B: int
    channels: tuple[int, int]
    bits: tuple[int, int]
    counts: np.ndarray
    expected: int

    @property
    def discrepancy(self) -> int:
        return int(np.abs(self.counts - self.expected).max())


def enumerate_joint(B: int, k1: int = 1, k2: int = 2) -> Enumeration:
    """Exact joint counts of (h_k1, h_k2) over all 2^B digit patterns.

    Product-uniform means every cell of the dyadic grid gets 2^(B - b1 - b2).
    """
    if not 1 <= B <= 16:
        raise PrecisionError("exhaustive enumeration is limited to B <= 16")
    if k1 == k2:
        raise ValueError("channels must differ")
    b1, b2 = channel_bits(k1, B), channel_bits(k2, B)
    words = np.arange(1 << B, dtype=np.uint64)
    i1 = channel_ints(words, k1, B).astype(np.int64)
    i2 = channel_ints(words, k2, B).astype(np.int64)
    counts = np.bincount(i1 * (1 << b2) + i2, minlength=1 << (b1 + b2)).reshape(1 << b1, 1 << b2)
    return Enumeration(B, (k1, k2), (b1, b2), counts, 1 << (B - b1 - b2))


# --------------------------------------------------------------------------
# statistical tests
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TestResult:
    name: str
    statistic: float
    critical: float
    passed: bool
    n: int

    def as_dict(self) -> dict:
        return {"name": self.name, "statistic": self.statistic, "critical": self.critical,
                "passed": self.passed, "n": self.n}


def ks_critical(n: int, alpha: float = ALPHA) -> float:
    return float(stats.kstwo.ppf(1 - alpha, n))


def ks_lattice_uniform(x, bits: int) -> float:
    """KS distance between the sample and the uniform law on the grid j 2^-bits.

    Uses the exact cdf of that discrete law, F(j 2^-bits) = (j + 1) 2^-bits, so
    a finite-precision channel is compared to its own null, not to U(0, 1).
    """
    x = np.sort(np.asarray(x, dtype=float))
    n = x.size
    i = np.arange(1, n + 1)
    h = 2.0 ** -bits
    d_plus = np.max(i / n - np.minimum(x + h, 1.0))
    d_minus = np.max(x - (i - 1) / n)
    return float(max(d_plus, d_minus, 0.0))


def ks_channels(n: int, K: int, seed: int, B: int = DEFAULT_BITS, gaussian: bool = False,
                alpha: float = ALPHA) -> list[TestResult]:
    """Channelwise KS of psi (uniform null) or gaussianize (normal null).

    For the normal null the statistic is computed on phi(g), which leaves the
    KS distance unchanged and keeps the lattice correction.
    """
    words = random_words(np.random.default_rng(seed), n)
    crit = ks_critical(n, alpha)
    out = []
    if gaussian:
        vals = phi(gaussianize_words(words, K, B))
    else:
        vals = split_words(words, K, B)
    for k in range(K):
        bits = channel_bits(k + 1, B)
        v = vals[:, k]
        if gaussian:
            # zero channels were mapped to 2^-(B+1); move them back onto the lattice
            v = np.where(v < 2.0 ** -(bits + 1), 0.0, v)
        D = ks_lattice_uniform(v, bits)
        out.append(TestResult(f"ks[{'normal' if gaussian else 'uniform'},h{k + 1}]", D, crit, D <= crit, n))
    return out


def chi2_pairs(n: int, K: int, seed: int, B: int = DEFAULT_BITS, bins_bits: int = 3,
               alpha: float = ALPHA) -> list[TestResult]:
    """Independence of each channel pair on 2^bins_bits x 2^bins_bits dyadic bins."""
    words = random_words(np.random.default_rng(seed), n)
    h = split_words(words, K, B)
    m = 1 << bins_bits
    idx = np.minimum((h * m).astype(np.int64), m - 1)
    crit = float(stats.chi2.ppf(1 - alpha, (m - 1) ** 2))
    out = []
    for a in range(K):
        for b in range(a + 1, K):
            table = np.bincount(idx[:, a] * m + idx[:, b], minlength=m * m).reshape(m, m)
            stat = float(stats.chi2_contingency(table, correction=False)[0])
            out.append(TestResult(f"chi2[h{a + 1},h{b + 1}]", stat, crit, stat <= crit, n))
    return out


CORR_BOUND = 0.02


def corr_pairs(n: int, K: int, seed: int, B: int = DEFAULT_BITS,
               bound: float = CORR_BOUND) -> list[TestResult]:
    g = gaussianize_words(random_words(np.random.default_rng(seed), n), K, B)
    r = np.corrcoef(g, rowvar=False)
    return [TestResult(f"corr[g{a + 1},g{b + 1}]", float(abs(r[a, b])), bound,
                       bool(abs(r[a, b]) <= bound), n)
            for a in range(K) for b in range(a + 1, K)]


# --------------------------------------------------------------------------
# discrete laws, quantiles, smoothing
# --------------------------------------------------------------------------

class DiscreteDistribution:
    """Finitely supported law: strictly increasing ``support``, positive ``probs``."""

    def __init__(self, support: Sequence[float], probs: Sequence[float]):
        x = np.array(support, dtype=float).ravel()
        q = np.array(probs, dtype=float).ravel()
        if x.size == 0 or x.size != q.size:
            raise ValueError("support and probs must be non-empty and of equal length")
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(q)):
            raise ValueError("support and probs must be finite")
        if np.any(np.diff(x) <= 0):
            i = int(np.flatnonzero(np.diff(x) <= 0)[0])
            raise ValueError(f"support not strictly increasing at index {i + 1}")
        if np.any(q <= 0):
            raise ValueError(f"probs[{int(np.flatnonzero(q <= 0)[0])}] is not positive")
        if abs(q.sum() - 1.0) > 1e-12:
            raise ValueError(f"probs sum to {q.sum()!r}, not 1")
        x.setflags(write=False)
        q.setflags(write=False)
        self.support, self.probs = x, q
        c = np.cumsum(q)
        c.setflags(write=False)
        self.cdf_at_support = c

    def cdf(self, x):
        i = np.searchsorted(self.support, x, side="right")
        c = np.concatenate([[0.0], self.cdf_at_support])
        return c[i]

    @property
    def mean(self) -> float:
        return float(self.probs @ self.support)

    @property
    def var(self) -> float:
        return float(self.probs @ (self.support - self.mean) ** 2)

    def __repr__(self):
        return f"DiscreteDistribution({self.support.tolist()}, {self.probs.tolist()})"


def quantile_func(nu: DiscreteDistribution, y):
    """G(y) = sup{x : nu((-inf, x]) < y}, i.e. the least support point with cdf >= y."""
    a = np.asarray(y, dtype=float)
    if not np.all((a > 0) & (a < 1)):
        raise ValueError("quantile_func needs y in (0, 1)")
    i = np.searchsorted(nu.cdf_at_support, a, side="left")
    # the float cdf may end a hair below 1
    i = np.minimum(i, nu.support.size - 1)
    out = nu.support[i]
    return float(out) if out.ndim == 0 else out


def smooth_sample(nu: DiscreteDistribution, eps: float, y0, y1, degenerate: bool = False):
    """eps * y0 + G(phi(y1)); normal inputs give the law of nu convolved with N(0, eps^2).

    ``eps = 0`` is only accepted with ``degenerate=True`` and returns G(phi(y1)).
    """
    if not eps > 0 and not (degenerate and eps == 0):
        raise ValueError(f"eps must be > 0, got {eps}")
    u = np.asarray(phi(y1), dtype=float)
    # phi underflows to 0 or rounds to 1 far in the tails
    u = np.clip(u, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
    out = eps * np.asarray(y0, dtype=float) + quantile_func(nu, u)
    return float(out) if np.ndim(out) == 0 else out


def total_variation(samples, nu: DiscreteDistribution) -> float:
    """TV distance between the empirical law of ``samples`` and nu (samples on the support)."""
    s = np.asarray(samples, dtype=float)
    idx = np.searchsorted(nu.support, s)
    idx = np.minimum(idx, nu.support.size - 1)
    off = nu.support[idx] != s
    counts = np.bincount(idx[~off], minlength=nu.support.size) / s.size
    return 0.5 * float(np.abs(counts - nu.probs).sum() + off.mean())
