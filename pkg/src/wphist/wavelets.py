"""Daubechies filters and the partial discrete wavelet-packet transform.

Boundaries are zero padded. Every node keeps exactly half of its input
length, so the packet vector has the same length as the signal and the
transform is a square (generally non-orthogonal) matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import comb

import numpy as np

from .errors import DecompositionError, InvalidParameterError, ShapeError

FAMILIES = ("daubechies",)
_MAX_MOMENTS = 10
_COND_LIMIT = 1e12


@dataclass(frozen=True)
class WaveletFilter:
    """Quadrature-mirror pair. ``low_pass`` has the minimum-phase orientation."""

    low_pass: np.ndarray
    high_pass: np.ndarray
    vanishing_moments: int
    name: str

    def __post_init__(self):
        self.low_pass.setflags(write=False)
        self.high_pass.setflags(write=False)

    @property
    def length(self) -> int:
        return len(self.low_pass)

    @property
    def analysis_low(self) -> np.ndarray:
        """Taps actually convolved with the signal (time-reversed ``low_pass``)."""
        return self.low_pass[::-1]

    @property
    def analysis_high(self) -> np.ndarray:
        return self.high_pass[::-1]

    def key(self) -> tuple:
        return (self.name, tuple(self.low_pass.tolist()))


def _daubechies_low_pass(n_moments: int) -> np.ndarray:
    # |H(w)|^2 = cos^{2N}(w/2) P(sin^2(w/2)); factor P keeping roots inside the unit circle
    coeffs = [comb(n_moments - 1 + k, k) for k in range(n_moments)]
    y_roots = np.roots(coeffs[::-1]) if n_moments > 1 else np.array([])
    taps = np.array([1.0])
    for _ in range(n_moments):
        taps = np.convolve(taps, [1.0, 1.0])
    for y in y_roots:
        # y = (2 - z - 1/z) / 4  ->  z^2 - (2 - 4y) z + 1 = 0
        pair = np.roots([1.0, -(2.0 - 4.0 * y), 1.0])
        z = pair[np.argmin(np.abs(pair))]
        taps = np.convolve(taps, [1.0, -z])
    # complex-conjugate roots come in pairs, so the imaginary part is rounding only
    taps = np.real(taps)
    return taps * (np.sqrt(2.0) / taps.sum())


def make_filter(family: str = "daubechies", vanishing_moments: int = 3) -> WaveletFilter:
    """Build the Daubechies filter pair with the given number of vanishing moments.

    >>> make_filter("daubechies", 1).low_pass.round(7).tolist()
    [0.7071068, 0.7071068]
    """
    if family not in FAMILIES:
        raise InvalidParameterError(f"unsupported wavelet family {family!r}")
    if int(vanishing_moments) != vanishing_moments or vanishing_moments < 1:
        raise InvalidParameterError(
            f"vanishing_moments must be a positive integer, got {vanishing_moments!r}"
        )
    n = int(vanishing_moments)
    if n > _MAX_MOMENTS:
        raise InvalidParameterError(
            f"vanishing_moments > {_MAX_MOMENTS} is not numerically reliable"
        )
    low = _daubechies_low_pass(n)
    length = len(low)
    high = np.array([(-1) ** l * low[length - 1 - l] for l in range(length)])
    return WaveletFilter(low, high, n, "haar" if n == 1 else f"db{n}")


def filter_from_name(name: str) -> WaveletFilter:
    """Parse ``"haar"`` or ``"db<N>"``."""
    tag = name.strip().lower()
    if tag == "haar":
        return make_filter("daubechies", 1)
    if tag.startswith("db") and tag[2:].isdigit():
        return make_filter("daubechies", int(tag[2:]))
    raise InvalidParameterError(f"unknown filter name {name!r}; expected 'haar' or 'db<N>'")


@dataclass(frozen=True)
class PacketDecomposition:
    coefficients: np.ndarray
    levels: int
    signal_length: int

    @property
    def n_scales(self) -> int:
        return 2**self.levels

    @property
    def scale_size(self) -> int:
        return self.signal_length // self.n_scales

    @property
    def scale_of(self) -> np.ndarray:
        return np.arange(self.signal_length) // self.scale_size

    @property
    def location_of(self) -> np.ndarray:
        return np.arange(self.signal_length) % self.scale_size

    def scale(self, s: int) -> np.ndarray:
        """Coefficients of bin ``s`` (time ordered)."""
        m = self.scale_size
        return self.coefficients[..., s * m : (s + 1) * m]


def _check_length(n: int, levels: int) -> None:
    if levels < 0 or int(levels) != levels:
        raise InvalidParameterError(f"levels must be a non-negative integer, got {levels!r}")
    if n == 0:
        raise ShapeError("signal is empty")
    if n % (2**levels):
        raise ShapeError(
            f"signal length {n} is not divisible by 2**levels = {2**levels}"
        )


def _filter_node(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Zero-padded convolution along the last axis, downsampled to half length.

    Keeps full-convolution outputs ``L/2, L/2 + 2, ...``; this centered window is
    the one that keeps the truncated operator invertible (a causal window makes
    the db3 packet matrix singular).
    """
    m = x.shape[-1]
    half = m // 2
    offset = len(taps) // 2
    out = np.zeros(x.shape[:-1] + (half,))
    positions = offset + 2 * np.arange(half)
    for l, h in enumerate(taps):
        src = positions - l
        ok = (src >= 0) & (src < m)
        out[..., ok] += h * x[..., src[ok]]
    return out


def dwpt(signal, filt: WaveletFilter, levels: int) -> PacketDecomposition:
    """Partial wavelet-packet transform to ``levels`` levels.

    Filters are applied as correlations (convolution with the reversed taps),
    the usual decomposition orientation. Approximation-type nodes send the low-pass output left and the high-pass
    output right; detail-type nodes swap the two, which leaves the final bins
    in increasing frequency order. Works along the last axis, so a 2-D array
    is transformed row by row.
    """
    x = np.asarray(signal, dtype=float)
    if x.ndim == 0:
        raise ShapeError("signal must be at least one-dimensional")
    n = x.shape[-1]
    _check_length(n, levels)
    # (array, is_detail)
    nodes = [(x, False)]
    for _ in range(levels):
        children = []
        for node, is_detail in nodes:
            lo = _filter_node(node, filt.analysis_low)
            hi = _filter_node(node, filt.analysis_high)
            if is_detail:
                children += [(hi, False), (lo, True)]
            else:
                children += [(lo, False), (hi, True)]
        nodes = children
    coefs = np.concatenate([node for node, _ in nodes], axis=-1) if levels else x.copy()
    return PacketDecomposition(coefs, int(levels), n)


@dataclass(frozen=True)
class PacketBasisMatrix:
    """``matrix @ x`` equals ``dwpt(x).coefficients``; ``inverse`` undoes it."""

    matrix: np.ndarray
    inverse: np.ndarray
    levels: int
    filter: WaveletFilter = field(repr=False)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def scale_size(self) -> int:
        return self.n // 2**self.levels

    @property
    def scale_of(self) -> np.ndarray:
        return np.arange(self.n) // self.scale_size

    @property
    def location_of(self) -> np.ndarray:
        return np.arange(self.n) % self.scale_size

    def forward(self, x) -> np.ndarray:
        """Row-wise transform of an array whose last axis is time."""
        return np.asarray(x, dtype=float) @ self.matrix.T

    def backward(self, w) -> np.ndarray:
        return np.asarray(w, dtype=float) @ self.inverse.T


@lru_cache(maxsize=32)
def _cached_basis(key, levels, n):
    filt = _FILTERS[key]
    # column i is the transform of the i-th unit impulse
    mat = dwpt(np.eye(n), filt, levels).coefficients.T.copy()
    cond = np.linalg.cond(mat)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise DecompositionError(
            f"packet matrix for {filt.name}, J={levels}, n={n} is numerically singular "
            f"(condition number {cond:.3g})"
        )
    if np.abs(mat @ mat.T - np.eye(n)).max() < 1e-12:
        # orthogonal (Haar): the transpose keeps the exact zeros of the support
        inv = mat.T.copy()
    else:
        inv = np.linalg.solve(mat, np.eye(n))
    mat.setflags(write=False)
    inv.setflags(write=False)
    return PacketBasisMatrix(mat, inv, levels, filt)


_FILTERS: dict = {}


def build_basis(filt: WaveletFilter, levels: int, n: int) -> PacketBasisMatrix:
    """Explicit packet matrix and its solved inverse (cached per filter, J, n)."""
    _check_length(n, levels)
    key = filt.key()
    _FILTERS.setdefault(key, filt)
    return _cached_basis(key, int(levels), int(n))


def idwpt(decomp: PacketDecomposition, basis: PacketBasisMatrix) -> np.ndarray:
    coefs = np.asarray(decomp.coefficients, dtype=float)
    if decomp.signal_length != basis.n or coefs.shape[-1] != basis.n:
        raise ShapeError(
            f"decomposition length {coefs.shape[-1]} does not match basis dimension {basis.n}"
        )
    return basis.backward(coefs)
