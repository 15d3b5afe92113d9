"""The characterizing family of spacing statistics.

With ``Y_{1,n} <= ... <= Y_{n,n}`` the sorted log-sample and
``D_j = Y_{n-j+1,n} - Y_{n-j,n}`` the top spacings,

* ``T2(k, l) = (1/k) sum_{j=l+1}^{k} j D_j``
* ``A1(k, l) = (1/k) sum_{j=l+1}^{k} sum_{i=j}^{k} w(i, j) (1 - [i=j]/2) D_i D_j``

The weight ``w`` of the double sum is the larger index ``i`` in the printed
form (``weight="outer"``, the default).  ``weight="inner"`` uses the smaller
index ``j``; that variant equals ``(n/k) int int (1 - G_n)`` over the window,
the empirical counterpart of the second tail integral, and is the one whose
limit is ``R_2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .models import SampleBatch

WEIGHTS = ("outer", "inner")


class WindowError(ValueError):
    """The window ``(k, l)`` is invalid for the sample."""


class DegenerateWindowError(ArithmeticError):
    """A denominator of a ratio statistic vanishes (ties in the window)."""


@dataclass(frozen=True)
class WindowConfig:
    k: int
    ell: int
    nu: float = 0.0
    y0: Optional[float] = None

    def __post_init__(self):
        if int(self.k) != self.k or int(self.ell) != self.ell:
            raise WindowError("k and ell must be integers")
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "ell", int(self.ell))
        if not 1 <= self.ell < self.k:
            raise WindowError(f"need 1 <= ell < k, got k={self.k}, ell={self.ell}")
        if not self.nu >= 0:
            raise WindowError("nu must be nonnegative")

    def check(self, n: int) -> None:
        if not self.k < n:
            raise WindowError(f"need k < n, got k={self.k}, n={n}")


@dataclass(frozen=True)
class StatVector:
    t1: float
    t2: float
    a1: float
    t3: float
    t4: float
    t5: float
    t6: float
    t7: float
    t8: float
    t9: Optional[float]
    window: WindowConfig
    n: int
    weight: str = "outer"

    def as_dict(self) -> dict:
        return {"t1": self.t1, "t2": self.t2, "t3": self.t3, "t4": self.t4,
                "t5": self.t5, "t6": self.t6, "t7": self.t7, "t8": self.t8,
                "t9": self.t9, "a1": self.a1, "n": self.n, "k": self.window.k,
                "ell": self.window.ell, "nu": self.window.nu}


def _check(batch: SampleBatch, k: int, ell: int) -> None:
    WindowConfig(k, ell).check(batch.n)


def spacings(y_sorted: np.ndarray, k: int) -> np.ndarray:
    """Return ``[D_1, ..., D_k]`` from an ascending array."""
    n = y_sorted.shape[0]
    return np.diff(y_sorted[n - k - 1:])[::-1]


def _t2_from_spacings(d: np.ndarray, k: int, ell: int) -> float:
    if ell >= k:
        return 0.0
    j = np.arange(ell + 1, k + 1, dtype=float)
    # Descending j, exactly rounded summation.
    return math.fsum((j * d[ell:k])[::-1]) / k


def _a1_from_spacings(d: np.ndarray, k: int, ell: int, weight: str) -> float:
    if ell >= k:
        return 0.0
    dk = d[:k]
    idx = np.arange(1, k + 1, dtype=float)
    if weight == "outer":
        # suffix sums S_j = sum_{i>=j} i D_i
        suffix = np.cumsum((idx * dk)[::-1])[::-1]
        terms = dk * (suffix - idx * dk / 2.0)
    elif weight == "inner":
        suffix = np.cumsum(dk[::-1])[::-1]
        terms = idx * dk * (suffix - dk / 2.0)
    else:
        raise ValueError(f"weight must be one of {WEIGHTS}")
    return math.fsum(terms[ell:k][::-1]) / k


def t2(batch: SampleBatch, k: int, ell: int) -> float:
    """``(1/k) sum_{j=l+1}^k j (Y_{n-j+1,n} - Y_{n-j,n})``."""
    _check(batch, k, ell)
    return _t2_from_spacings(spacings(batch.y_sorted, k), k, ell)


def a1(batch: SampleBatch, k: int, ell: int, weight: str = "outer") -> float:
    """Double spacing sum in ``O(k)`` through suffix sums."""
    _check(batch, k, ell)
    return _a1_from_spacings(spacings(batch.y_sorted, k), k, ell, weight)


def a1_naive(batch: SampleBatch, k: int, ell: int, weight: str = "outer") -> float:
    """Literal ``O(k^2)`` double loop; the reference for :func:`a1`."""
    _check(batch, k, ell)
    if weight not in WEIGHTS:
        raise ValueError(f"weight must be one of {WEIGHTS}")
    y = batch.y_sorted
    n = batch.n
    terms = []
    for j in range(k, ell, -1):
        dj = y[n - j] - y[n - j - 1]
        for i in range(k, j - 1, -1):
            di = y[n - i] - y[n - i - 1]
            w = i if weight == "outer" else j
            terms.append(w * (1.0 - 0.5 * (i == j)) * di * dj)
    return math.fsum(terms) / k


def a1_alternate_print(batch: SampleBatch, k: int, ell: int) -> float:
    """The second printed form with a bare Kronecker delta.

    ``(1/k) sum_j sum_{i>=j} i [i=j] (Y_{n-i+1,n} - Y_{n-j+1,n}) D_j``.  The
    delta forces ``i = j`` and then the first factor is zero, so this form
    vanishes for every sample.  Exposed for the discrepancy report only.
    """
    _check(batch, k, ell)
    y = batch.y_sorted
    n = batch.n
    terms = []
    for j in range(k, ell, -1):
        dj = y[n - j] - y[n - j - 1]
        for i in range(k, j - 1, -1):
            delta = 1.0 if i == j else 0.0
            terms.append(i * delta * (y[n - i] - y[n - j]) * dj)
    return math.fsum(terms) / k


def stat_vector(batch: SampleBatch, window: WindowConfig,
                weight: str = "outer") -> StatVector:
    """Evaluate ``T1 ... T9`` and ``A1`` at one window."""
    window.check(batch.n)
    k, ell, nu = window.k, window.ell, window.nu
    y = batch.y_sorted
    n = batch.n
    d = spacings(y, k)
    t2v = _t2_from_spacings(d, k, ell)
    a1v = _a1_from_spacings(d, k, ell, weight)
    if not a1v > 0:
        raise DegenerateWindowError("A1 vanishes: the top spacings are all zero")
    t1v = t2v / math.sqrt(a1v)
    spread = y[n - ell - 1] - y[n - k - 1]
    if not spread > 0:
        raise DegenerateWindowError(
            f"Y_(n-{ell}) equals Y_(n-{k}); ratio statistics are undefined")
    if not t2v > 0:
        raise DegenerateWindowError("T2 vanishes")
    scale = float(n) ** (-nu)
    t3v = scale * spread / t2v
    t5v = _t2_from_spacings(d, ell, 1)
    t6v = t5v / spread
    t7v = _a1_from_spacings(d, ell, 1, weight) / spread ** 2
    t8v = scale / spread
    t9v = None
    if window.y0 is not None:
        top = y[n - ell - 1]
        if not window.y0 > top:
            raise DegenerateWindowError("y0 must exceed Y_(n-ell)")
        t9v = (window.y0 - top) / (window.y0 - y[n - k - 1])
    return StatVector(t1=t1v, t2=t2v, a1=a1v, t3=t3v, t4=float(y[-1]), t5=t5v,
                      t6=t6v, t7=t7v, t8=t8v, t9=t9v, window=window, n=n,
                      weight=weight)
