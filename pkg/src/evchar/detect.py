"""Domain-of-attraction labelling from one sample.

The limit statement behind the rule has no finite-sample version, so the
decision uses thresholds on the ``sqrt(k)`` scale:

1. bounded and Weibull-like: the two half-sample maxima agree to within
   ``T2(k, 1)/sqrt(k)`` and ``c = T1`` lies in ``(1 + z/sqrt(k), sqrt(2))``;
2. Gumbel: ``|T2| <= z/sqrt(k)``;
3. Frechet otherwise, with index ``1/T2``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .estimators import WindowConfig, _t2_from_spacings, spacings, stat_vector
from .models import SampleBatch

DEFAULT_Z = 2.5
SPLIT_SEED = 20240917


class Label(str, enum.Enum):
    GUMBEL = "Gumbel"
    FRECHET = "Frechet"
    WEIBULL = "Weibull"
    UNDECIDED = "Undecided"


class Variant(str, enum.Enum):
    PAPER_FORMULA = "PaperFormula"
    MOMENT_RATIO = "MomentRatio"


def gamma_from_c(c: float, variant: Variant = Variant.MOMENT_RATIO) -> float:
    """Invert ``c`` into ``gamma``.

    ``PaperFormula``: ``-2 + c/(c^2 - 1)``.  ``MomentRatio``: ``(2 - c^2)/(c^2 - 1)``,
    the inverse of ``c^2 = (gamma+2)/(gamma+1)``.
    """
    variant = Variant(variant)
    if not 1 < c < math.sqrt(2):
        raise ValueError(f"c must lie in (1, sqrt 2), got {c!r}")
    c2 = c * c
    if variant is Variant.PAPER_FORMULA:
        return -2.0 + c / (c2 - 1.0)
    return (2.0 - c2) / (c2 - 1.0)


def c_of_gamma(gamma: float) -> float:
    return math.sqrt((gamma + 2.0) / (gamma + 1.0))


@dataclass(frozen=True)
class DetectionResult:
    domain_label: Label
    d_hat: float
    c_hat: float
    gamma_hat: Optional[float]
    gamma_hat_variants: Dict[str, Optional[float]]
    diagnostics: Dict[str, float]
    thresholds: Dict[str, float]

    def as_dict(self) -> dict:
        return {"domain_label": self.domain_label.value, "d_hat": self.d_hat,
                "c_hat": self.c_hat, "gamma_hat": self.gamma_hat,
                "gamma_hat_variants": dict(self.gamma_hat_variants),
                "diagnostics": dict(self.diagnostics), "thresholds": dict(self.thresholds)}


def _half_maxima(y: np.ndarray) -> tuple:
    # A fixed pseudo-random split of the ranks; labels are then invariant to
    # the input order and to shifts of the log-sample.
    rng = np.random.default_rng(SPLIT_SEED)
    mask = rng.random(y.size) < 0.5
    return float(y[mask].max()), float(y[~mask].max())


def detect(batch: SampleBatch, alpha: float = 0.7, beta: float = 0.55,
           delta: float = 0.25, z: float = DEFAULT_Z, weight: str = "inner") -> DetectionResult:
    if not 0.5 < beta < alpha < 1:
        raise ValueError("need 0.5 < beta < alpha < 1")
    if not 0 < delta < 0.5:
        raise ValueError("need 0 < delta < 0.5")
    n = batch.n
    k, ell = int(math.floor(n ** alpha + 1e-9)), int(math.floor(n ** beta + 1e-9))
    if ell < 2:
        raise ValueError("n too small: need floor(n^beta) >= 2")
    two_nu = min(1 - alpha, alpha + delta - 1)
    sv = stat_vector(batch, WindowConfig(k, ell, nu=beta / 2), weight=weight)
    y = batch.y_sorted
    d_hat, c_hat = sv.t2, sv.t1
    rk = math.sqrt(k)
    top_scale = _t2_from_spacings(spacings(y, k), k, 1) / rk
    m_a, m_b = _half_maxima(y)
    bounded = abs(m_a - m_b) < top_scale
    c_low = 1 + z / rk
    thresholds = {"z": z, "k": k, "ell": ell, "nu": beta / 2, "two_nu": two_nu,
                  "gumbel_band": z / rk, "c_low": c_low, "c_high": math.sqrt(2),
                  "max_gap_bound": top_scale}
    diag = {f"t{i}": getattr(sv, f"t{i}") for i in range(1, 9)}
    diag.update(a1=sv.a1, half_max_gap=abs(m_a - m_b), bounded=float(bounded))
    variants: Dict[str, Optional[float]] = {v.value: None for v in Variant}
    if 1 < c_hat < math.sqrt(2):
        for v in Variant:
            variants[v.value] = gamma_from_c(c_hat, v)
    if bounded and c_low < c_hat < math.sqrt(2):
        label, gamma_hat = Label.WEIBULL, variants[Variant.MOMENT_RATIO.value]
    elif abs(d_hat) <= z / rk:
        label, gamma_hat = Label.GUMBEL, None
    elif d_hat > z / rk:
        label, gamma_hat = Label.FRECHET, 1.0 / d_hat
    else:
        label, gamma_hat = Label.UNDECIDED, None
    return DetectionResult(label, d_hat, c_hat, gamma_hat, variants, diag, thresholds)
