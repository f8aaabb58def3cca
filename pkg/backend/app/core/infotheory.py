"""
Histogram estimates of entropy and mutual information, and the Fano bounds.

All logarithms are base 2, so every quantity is in bits. Zero-probability
cells contribute nothing (0 log 0 = 0).
"""
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from app.core.errors import DomainError


@dataclass(frozen=True)
class Histogram:
    """Counts per symbol"""
    counts: np.ndarray

    @classmethod
    def from_symbols(cls, symbols, mask: Optional[np.ndarray] = None) -> "Histogram":
        symbols = np.asarray(symbols).ravel()
        if mask is not None:
            symbols = symbols[np.asarray(mask, dtype=bool).ravel()]
        if symbols.size == 0:
            raise DomainError("Cannot build a histogram from an empty selection")
        return cls(counts=np.bincount(symbols.astype(np.int64)))

    @property
    def total(self) -> float:
        return float(self.counts.sum())


@dataclass(frozen=True)
class JointHistogram:
    """Co-occurrence counts, counts[x, y]"""
    counts: np.ndarray

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    @property
    def marginal_x(self) -> Histogram:
        return Histogram(self.counts.sum(axis=1))

    @property
    def marginal_y(self) -> Histogram:
        return Histogram(self.counts.sum(axis=0))

    def transpose(self) -> "JointHistogram":
        return JointHistogram(self.counts.T.copy())


@dataclass(frozen=True)
class FanoBounds:
    """Bracket on the error probability from H(C|X) and the class count"""
    lower: float
    upper: float
    conditional_entropy: float
    class_count: int


def _smoothed(counts: np.ndarray, pseudocount: float) -> np.ndarray:
    if pseudocount < 0:
        raise DomainError(f"Pseudocount must be nonnegative, got {pseudocount}")
    return counts + pseudocount if pseudocount else counts


def _entropy_of_counts(counts: np.ndarray) -> float:
    total = counts.sum()
    if total <= 0:
        raise DomainError("Entropy of an empty histogram is undefined")
    p = counts[counts > 0] / total
    return max(0.0, -math.fsum((p * np.log2(p)).tolist()))


def entropy(h: Histogram, pseudocount: float = 0.0) -> float:
    """Shannon entropy -sum p log2 p of a histogram, in bits"""
    return _entropy_of_counts(_smoothed(np.asarray(h.counts, dtype=np.float64), pseudocount))


def joint_histogram(x, y, mask: Optional[np.ndarray] = None) -> JointHistogram:
    """
    Count co-occurring (x, y) symbol pairs over the masked positions.

    Args:
        x, y: Nonnegative integer symbol sequences of equal length
        mask: Boolean selection of positions; all positions when None

    Raises:
        DomainError: On a length mismatch or an empty selection
    """
    x = np.asarray(x).ravel()
    y = np.asarray(y).ravel()
    if x.shape != y.shape:
        raise DomainError(f"Sequences differ in length: {x.size} vs {y.size}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool).ravel()
        if mask.shape != x.shape:
            raise DomainError(f"Mask length {mask.size} does not match sequence length {x.size}")
        x, y = x[mask], y[mask]
    if x.size == 0:
        raise DomainError("Joint histogram needs a nonempty selection")

    x = x.astype(np.int64)
    y = y.astype(np.int64)
    nx, ny = int(x.max()) + 1, int(y.max()) + 1
    counts = np.bincount(x * ny + y, minlength=nx * ny).reshape(nx, ny)
    return JointHistogram(counts)


def joint_entropy(j: JointHistogram, pseudocount: float = 0.0) -> float:
    return _entropy_of_counts(_smoothed(np.asarray(j.counts, dtype=np.float64), pseudocount).ravel())


def mutual_information(j: JointHistogram, pseudocount: float = 0.0) -> float:
    """
    I(X;Y) = sum p(x,y) log2( p(x,y) / (p(x) p(y)) ), in bits.

    The terms are summed with math.fsum, so the result does not depend on
    their order and I(X;Y) == I(Y;X) holds exactly.
    """
    counts = _smoothed(np.asarray(j.counts, dtype=np.float64), pseudocount)
    total = counts.sum()
    if total <= 0:
        raise DomainError("Mutual information of an empty joint histogram is undefined")

    # marginals from raw counts: integer sums are exact in either orientation
    p_xy = counts / total
    p_x = counts.sum(axis=1) / total
    p_y = counts.sum(axis=0) / total
    ix, iy = np.nonzero(p_xy)
    cells = p_xy[ix, iy]
    terms = cells * np.log2(cells / (p_x[ix] * p_y[iy]))
    return max(0.0, math.fsum(terms.tolist()))


def information_gain(band, labels, mask: Optional[np.ndarray] = None) -> float:
    """I(band; labels) over the masked positions"""
    return mutual_information(joint_histogram(band, labels, mask))


def conditional_entropy(hc: float, i: float) -> float:
    """H(C|X) = H(C) - I(C;X), clamped at 0 against estimation noise"""
    if hc < 0:
        raise DomainError(f"H(C) must be nonnegative, got {hc}")
    return max(0.0, hc - i)


def fano_bounds(hc_given_x: float, nc: int) -> FanoBounds:
    """
    Fano bracket on the error probability.

    lower = max(0, (H(C|X) - 1) / log2 Nc), upper = H(C|X) / log2 Nc
    """
    if nc < 2:
        raise DomainError(f"Fano bounds need at least 2 classes, got {nc}")
    if hc_given_x < 0:
        raise DomainError(f"H(C|X) must be nonnegative, got {hc_given_x}")

    log_nc = math.log2(nc)
    return FanoBounds(
        lower=max(0.0, (hc_given_x - 1.0) / log_nc),
        upper=hc_given_x / log_nc,
        conditional_entropy=hc_given_x,
        class_count=nc,
    )
