"""Closed-form asymptotic quantities.

Tail functionals ``R_p``, centering sequences, limiting variances, the
coefficient family ``e_i``, covariance matrices (printed and reconstructed from
linear combinations of the limiting Gaussian functionals) and the laws driving
the extremal limits when ``l`` stays fixed.

Notation: ``x = G^{-1}(1-u_x)``, ``z = G^{-1}(1-u_z)`` and

    R_p(x, z) = (1-G(x))^{-1} int_x^z (t-x)^{p-1}/(p-1)! (1-G(t)) dt.

Integrating by parts moves the integral to the quantile scale:

    R_p(x, z) = (u_z/u_x) (z-x)^p/p! + int_0^V (Q(u_x e^{-v}) - x)^p/p! e^{-v} dv

with ``V = log(u_x/u_z)`` and ``Q(u) = G^{-1}(1-u)``.  No density is needed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, special

from .models import QuadratureError, TailModel, quantile_g, survival_g

INF = math.inf
R_RTOL = 1e-8
# exp(-690) ~ 1e-300: beyond this the quantile argument underflows and the
# remaining mass is below double resolution.
_V_CAP = 690.0


class Provenance(str, enum.Enum):
    CLOSED_FORM = "ClosedForm"
    QUADRATURE = "Quadrature"
    EMPIRICAL = "Empirical"


class Regime(str, enum.Enum):
    GAMMA_INF = "GammaInf"
    GAMMA_GT2 = "GammaGt2"
    GAMMA_LT2 = "GammaLt2"


def regime_of(gamma: float) -> Regime:
    _check_gamma(gamma)
    if gamma == INF:
        return Regime.GAMMA_INF
    if gamma > 2:
        return Regime.GAMMA_GT2
    if gamma < 2:
        return Regime.GAMMA_LT2
    raise ValueError("gamma = 2 is a boundary case with no single limit")


def _check_gamma(gamma: float) -> None:
    if not gamma > 0:
        raise ValueError(f"gamma must be positive or infinite, got {gamma!r}")


# ---------------------------------------------------------------------------
# coefficients and variances


@dataclass(frozen=True)
class CoefficientSet:
    gamma: float
    e1: float
    e2: float
    e3: float
    e4: float
    kappa: float


def coefficients(gamma: float) -> CoefficientSet:
    _check_gamma(gamma)
    if gamma == INF:
        return CoefficientSet(gamma, 1.0, 1.0, 1.0, 1.0, 1.0)
    g = float(gamma)
    return CoefficientSet(g, (g + 1) / g, g + 1, (g + 2) / g, g + 2, (g + 1) / (g + 2))


_SIGMA_INF = (2.0, 1.0, 6.0, 5.0, 0.5, 0.25)


def sigma(i: int, gamma: float) -> float:
    """Printed limiting variance ``sigma_i^2(gamma)``, ``i = 0..5``."""
    _check_gamma(gamma)
    if i not in range(6):
        raise ValueError("sigma index must be in 0..5")
    if gamma == INF:
        return _SIGMA_INF[i]
    g = float(gamma)
    if i == 0:
        return 2 * (g + 1) / (g + 2)
    if i == 1:
        return (g ** 3 + g ** 2 + 2) / (g ** 2 * (g + 2))
    if i == 2:
        return 6 * (g + 1) * (g + 2) / ((g + 3) * (g + 4))
    if i == 3:
        return (5 * g ** 4 + 11 * g ** 3 + 4 * g ** 2 + 7 * g + 12) / (g ** 2 * (g + 3) * (g + 4))
    if i == 4:
        return (2 * g ** 3 + 10 * g ** 2 + 32 * g + 24) / (4 * (g + 1) * (g + 3) * (g + 4))
    return (g ** 3 + g ** 2 + 2 * g) / (4 * (g + 1) * (g + 3) * (g + 4))


@dataclass(frozen=True)
class BaseCov:
    """Limiting covariances of ``(N0, N3, N2)`` for one window pair.

    ``n2`` is the functional at the lower threshold of the same window.
    """

    v0: float
    v3: float
    c03: float
    c02: float
    c32: float
    v2: float

    def matrix(self) -> np.ndarray:
        return np.array([[self.v0, self.c03, self.c02],
                         [self.c03, self.v3, self.c32],
                         [self.c02, self.c32, self.v2]])

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "BaseCov":
        m = np.asarray(m, dtype=float)
        return cls(m[0, 0], m[1, 1], m[0, 1], m[0, 2], m[1, 2], m[2, 2])


def base_cov_limit(gamma: float) -> BaseCov:
    """Closed-form limits as ``k/n -> 0`` and ``l/k -> 0``.

    They follow from ``R_p(x) ~ (y0-x)^p / prod_{j=1..p}(gamma+j)`` and the
    exact bridge covariances (see :func:`evchar.bridge.exact_cov`).
    """
    _check_gamma(gamma)
    if gamma == INF:
        return BaseCov(2.0, 6.0, 3.0, -1.0, -1.0, 1.0)
    g = float(gamma)
    return BaseCov(v0=2 * (g + 1) / (g + 2),
                   v3=6 * (g + 1) * (g + 2) / ((g + 3) * (g + 4)),
                   c03=3 * (g + 1) / (g + 3), c02=-1.0, c32=-1.0, v2=1.0)


def _quad_form(w: Sequence[float], base: BaseCov) -> float:
    w = np.asarray(w, dtype=float)
    return float(w @ base.matrix() @ w)


def sigma_reconstructed(i: int, gamma: float, base: Optional[BaseCov] = None) -> float:
    """``sigma_i^2`` recomputed as the variance of its Gaussian decomposition.

    ``i=0``: ``N0``; ``1``: ``N0 + e1 N2``; ``2``: ``N3``; ``3``: ``N3 + e3 N2``;
    ``4``: ``(2 N0 - N3)/(2 sqrt(kappa))``; ``5``: ``(2 N0 - N3 + N2)/(2 sqrt(kappa))``.
    """
    if i not in range(6):
        raise ValueError("sigma index must be in 0..5")
    base = base or base_cov_limit(gamma)
    e = coefficients(gamma)
    h = 0.5 / math.sqrt(e.kappa)
    weights = {0: (1, 0, 0), 1: (1, 0, e.e1), 2: (0, 1, 0), 3: (0, 1, e.e3),
               4: (2 * h, -h, 0), 5: (2 * h, -h, h)}[i]
    return _quad_form(weights, base)


# ---------------------------------------------------------------------------
# R_p functionals


def _validate_u(u_x: float, u_z: float) -> None:
    if not 0 < u_x < 1:
        raise ValueError("u_x must lie in (0, 1)")
    if not 0 <= u_z < u_x:
        raise ValueError("need 0 <= u_z < u_x")


def r_p(model: TailModel, p: int, u_x: float, u_z: float = 0.0) -> float:
    """``R_p(x, z, G)`` for ``p = 1..4``; ``u_z = 0`` puts ``z`` at the endpoint."""
    if p not in (1, 2, 3, 4):
        raise ValueError("p must be 1, 2, 3 or 4")
    _validate_u(u_x, u_z)
    x = quantile_g(model, u_x)
    fact = math.factorial(p)
    head = 0.0
    if u_z > 0:
        z = quantile_g(model, u_z)
        head = (u_z / u_x) * (z - x) ** p / fact
        upper = math.log(u_x / u_z)
    else:
        upper = math.inf
    upper = min(upper, _V_CAP + math.log(u_x))

    def integrand(v):
        return (quantile_g(model, u_x * math.exp(-v)) - x) ** p / fact * math.exp(-v)

    # Split at a few scale points so the adaptive rule sees the bulk of the mass.
    breaks = [b for b in (0.0, 1.0, 5.0, 20.0, 60.0) if b < upper] + [upper]
    total, err_total = 0.0, 0.0
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        val, err = integrate.quad(integrand, lo, hi, epsrel=R_RTOL * 0.1,
                                  epsabs=0.0, limit=200)
        total += val
        err_total += err
    result = head + total
    if not math.isfinite(result) or err_total > max(R_RTOL * abs(result), 1e-300):
        raise QuadratureError(f"R_{p} quadrature did not converge (err {err_total:.3g})")
    return result


def r_p_nested(model: TailModel, p: int, u_x: float, u_z: float = 0.0,
               z_floor: float = 1e-16) -> float:
    """Iterated-integral definition of ``R_p`` on the ``t`` scale (``p <= 3``).

    Slow; used only as an oracle.  With ``u_z = 0`` the upper limit is the
    endpoint for bounded models, else ``G^{-1}(1 - z_floor u_x)``.
    """
    if p not in (1, 2, 3):
        raise ValueError("the nested oracle supports p = 1, 2, 3")
    _validate_u(u_x, u_z)
    x = quantile_g(model, u_x)
    if u_z > 0:
        z = quantile_g(model, u_z)
    elif math.isfinite(model.y0):
        z = model.y0
    else:
        z = quantile_g(model, z_floor * u_x)
    opts = dict(epsrel=1e-10, epsabs=0.0, limit=200)

    def surv(t):
        return float(survival_g(model, t))

    def level(q, y):
        if q == 1:
            return integrate.quad(surv, y, z, **opts)[0]
        return integrate.quad(lambda s: level(q - 1, s), y, z, **opts)[0]

    return level(p, x) / u_x


def centering(model: TailModel, n: int, k: int, ell: int) -> Tuple[float, float]:
    """``(mu_n(k, l), tau(k, l))`` with ``x_n = G^{-1}(1-k/n)``, ``z_n = G^{-1}(1-l/n)``."""
    if not 1 <= ell < k < n:
        raise ValueError("need 1 <= ell < k < n")
    u_x, u_z = k / n, ell / n
    return r_p(model, 1, u_x, u_z), r_p(model, 2, u_x, u_z)


def random_centering(model: TailModel, n: int, k: int, ell: int,
                     x_tilde: float) -> Tuple[float, float]:
    """Centering with ``x_n`` replaced by the realized threshold ``x_tilde``.

    ``mu(k~, l) = (n/k) int_{x~}^{z_n} (1-G)`` and likewise for ``tau``.
    """
    if not 1 <= ell < k < n:
        raise ValueError("need 1 <= ell < k < n")
    u_xt = float(survival_g(model, x_tilde))
    u_z = ell / n
    if not u_xt > u_z:
        raise ValueError("realized threshold lies above z_n")
    scale = (n / k) * u_xt
    return scale * r_p(model, 1, u_xt, u_z), scale * r_p(model, 2, u_xt, u_z)


# ---------------------------------------------------------------------------
# covariance matrices


@dataclass(frozen=True)
class CovMatrix:
    name: str
    entries: np.ndarray
    provenance: Provenance
    regime: Regime
    gamma: float = INF
    labels: Tuple[str, ...] = ()

    @property
    def dim(self) -> int:
        return int(self.entries.shape[0])

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        e = self.entries
        both_nan = np.isnan(e) & np.isnan(e.T)
        close = np.abs(e - e.T) <= tol
        return bool(np.all(both_nan | close))

    def psd_check(self, tol: float = 1e-10) -> Optional[bool]:
        """``None`` when the matrix has missing entries and cannot be assessed."""
        if np.any(np.isnan(self.entries)):
            return None
        w = np.linalg.eigvalsh(0.5 * (self.entries + self.entries.T))
        return bool(w.min() >= -tol * max(1.0, np.abs(w).max()))


def _from_lower(rows: List[List[float]]) -> np.ndarray:
    """Mirror ragged lower-triangle rows into a square matrix; gaps are NaN."""
    dim = max(len(rows), max(len(r) for r in rows))
    m = np.full((dim, dim), np.nan)
    for i, row in enumerate(rows):
        for j, v in enumerate(row):
            m[i, j] = v
            if np.isnan(m[j, i]) or j == i:
                m[j, i] = v
    return m


MATRIX_NAMES = ("theorem_c", "sigma_star", "sigma_star_star")


def _printed_rows(name: str, gamma: float) -> List[List[float]]:
    g = gamma
    rg = regime_of(g)
    if name == "theorem_c":
        if rg is Regime.GAMMA_INF:
            return [[3.0], [3.0, 6.0], [-1.0, -1.0, 1.0]]
        return [[3 * (g + 1) / (g + 2)],
                [3 * (g + 1) * (g + 3), 6 * (g + 1) * (g + 2) / ((g + 3) * (g + 4))],
                [-1.0, -1.0, 1.0]]
    if name == "sigma_star":
        if rg is Regime.GAMMA_INF:
            return [[0.5], [-0.5, 5.0], [0.0, 2.0, 1.0]]
        r = math.sqrt((g + 2) / (g + 1))
        if rg is Regime.GAMMA_GT2:
            # Transcribed literally, including the garbled polynomial.
            return [[(g ** 3 + g ** 2 + 2 * g) / (4 * (g + 1) * (g + 3) * (g + 4))],
                    [-0.5 * r, g * (g - 5) / ((g + 3) * (g + 4)),
                     (5 * g + 11 * g + 4 ** 4 * g + 7 ** 3 * g + 12 ** 2)
                     / (g ** 2 * (g + 3) * (g + 4))],
                    [0.5 * r, 2 * g / ((g + 1) * (g + 2)),
                     (2 * g ** 3 + 4 * g ** 2 + 18 * g + 18) / (g ** 2 * (g + 3)),
                     (g ** 3 + g ** 2 + 2) / (g ** 2 * (g + 2))]]
        return [[(g ** 3 + g ** 2 + 2) / (4 * (g + 1) * (g + 3) * (g + 4))],
                [-0.5 * r, g * (g + 5) / ((g + 3) * (g + 4)),
                 (5 * g ** 4 + 11 * g ** 3 + 4 * g ** 2 + 7 * g + 12)
                 / (g ** 2 * (g + 3) * (g + 4))],
                [-0.5 * (g + 2) / (g + 1), 2 * g / ((g + 3) * (g + 4)),
                 (2 * g ** 3 + 4 * g ** 2 + 18 * g + 18) / (g ** 2 * (g + 3)),
                 (g ** 3 + g ** 2 + 2) / (g ** 2 * (g + 2))],
                [-0.5 * (g + 2) * math.sqrt(g + 1),
                 (2 * g ** 2 + 12 * g + 12) / ((g + 2) * (g + 3)) - (g + 1),
                 (2 * g ** 2 + 4 * g ** 2 - 12) / (g * (g + 3)) - (g + 1),
                 (g ** 2 - 2 * g - 4) / (g * (g + 2)),
                 (g + 1) ** 2 * (5 * g + 8) / (g + 2)]]
    if name == "sigma_star_star":
        if rg is Regime.GAMMA_INF:
            return [[1.0], [0.0, 1.0], [0.0, -1.0, 1.0], [0.0, -2.0, 2.0, 5.0],
                    [1.0, 0.0, 0.0, 0.0, 1.0]]
        s1 = (g ** 3 + g ** 2 + 2) / (g ** 2 * (g + 2))
        c4 = (2 * g ** 3 + 4 * g ** 2 + 18 * g + 18) / (g ** 2 * (g + 3))
        s3 = (5 * g ** 4 + 11 * g ** 3 + 4 * g ** 2 + 7 * g + 12) / (g ** 2 * (g + 3) * (g + 4))
        if rg is Regime.GAMMA_GT2:
            return [[(g + 1) / g],
                    [-(g + 1) / g ** 2, (g ** 3 + g ** 2 + 2) / (g ** 2 + (g + 2))],
                    [(g + 1) / g ** 2, s1, s1],
                    [2 * (g + 1) * g ** 2, c4, c4, s3],
                    [-(g + 1) / g ** 2, g ** -2, -g ** -2, -2 * g ** -2, g ** -2]]
        return [[s1], [-s1, s1],
                [-c4, (2 * g ** 3 + 4 * g ** 2 + 18 * g + 18) / (g ** 2 * (g + 1)),
                 (5 * g ** 4 + 11 * g ** 3 + 4 * g + 7 * g + 12) / (g ** 2 * (g + 3) * (g + 4))],
                [g ** -2, -g ** -2, -2 * g ** -2, g ** -2]]
    raise ValueError(f"unknown matrix {name!r}; expected one of {MATRIX_NAMES}")


def printed_cov(name: str, gamma: float = INF) -> CovMatrix:
    """The printed matrix, verbatim, as a symmetric array (gaps are NaN)."""
    entries = _from_lower(_printed_rows(name, gamma))
    return CovMatrix(name, entries, Provenance.CLOSED_FORM, regime_of(gamma), gamma)


# Basis for the reconstructions: (N0k, N3k, N2k, N0l, N3l, N2l), the k-window
# and the l-window functionals.  Blocks are independent in the limit.
_BASIS = ("N0k", "N3k", "N2k", "N0l", "N3l", "N2l")


def combination_weights(name: str, gamma: float) -> Tuple[np.ndarray, Tuple[str, ...]]:
    """Rows of linear weights on the six limiting functionals."""
    rg = regime_of(gamma)
    e = coefficients(gamma)
    h = 0.5 / math.sqrt(e.kappa)
    if name == "theorem_c":
        return np.eye(6)[:3], ("N0", "N3", "N2")
    if name == "sigma_star":
        rows = [[2 * h, -h, h, 0, 0, 0],
                [0, 1, e.e3, 0, 0, 0],
                [1, 0, e.e1, 0, 0, 0]]
        labels = ["T1", "A1", "T2"]
        if rg is Regime.GAMMA_LT2:
            rows.append([-(gamma + 1), 0, -1, 0, 0, 0])
            labels.append("T3")
        return np.array(rows, dtype=float), tuple(labels)
    if name == "sigma_star_star":
        rows = [[0, 0, 0, 0, 0, -e.e1],
                [0, 0, 0, 1, 0, e.e1],
                [0, 0, 0, -1, 0, -e.e1],
                [0, 0, 0, 0, -1, -e.e3],
                [0, 0, 0, 0, 0, -1.0 if rg is Regime.GAMMA_INF else 1.0 / gamma]]
        labels = ["T3", "T5", "T6inv", "T7inv", "T8" if rg is Regime.GAMMA_INF else "T9"]
        if rg is Regime.GAMMA_LT2:
            rows, labels = rows[1:], labels[1:]
        return np.array(rows, dtype=float), tuple(labels)
    raise ValueError(f"unknown matrix {name!r}; expected one of {MATRIX_NAMES}")


def joint_base(base_k: BaseCov, base_l: Optional[BaseCov] = None) -> np.ndarray:
    """Block-diagonal 6x6 covariance of the six limiting functionals."""
    out = np.zeros((6, 6))
    out[:3, :3] = base_k.matrix()
    out[3:, 3:] = (base_l or base_k).matrix()
    return out


def reconstructed_cov(name: str, gamma: float = INF, base: Optional[BaseCov] = None,
                      provenance: Provenance = Provenance.CLOSED_FORM) -> CovMatrix:
    """Covariance of the Gaussian decomposition with the given base covariances."""
    base = base or base_cov_limit(gamma)
    w, labels = combination_weights(name, gamma)
    entries = w @ joint_base(base) @ w.T
    return CovMatrix(name, entries, provenance, regime_of(gamma), gamma, labels)


@dataclass(frozen=True)
class CovPair:
    printed: CovMatrix
    reconstructed: CovMatrix


def cov_matrix(name: str, gamma: float = INF, base: Optional[BaseCov] = None) -> CovPair:
    """Printed matrix plus its reconstruction (the operational value)."""
    prov = Provenance.CLOSED_FORM if base is None else Provenance.QUADRATURE
    return CovPair(printed_cov(name, gamma), reconstructed_cov(name, gamma, base, prov))


def matrix_discrepancies(name: str, gamma: float = INF, base: Optional[BaseCov] = None,
                         rtol: float = 1e-6) -> List[dict]:
    """Entry-wise printed vs reconstructed differences (lower triangle)."""
    pair = cov_matrix(name, gamma, base)
    p, r = pair.printed.entries, pair.reconstructed.entries
    out = []
    # Printed rows longer than their index overwrite the mirrored entry.
    for i in range(p.shape[0]):
        for j in range(i + 1, p.shape[0]):
            a, b = p[i, j], p[j, i]
            if not (np.isnan(a) and np.isnan(b)) and not abs(a - b) <= 1e-12:
                out.append({"matrix": name, "gamma": gamma, "row": i + 1, "col": j + 1,
                            "printed": a, "reconstructed": b, "kind": "asymmetric"})
    dim = max(p.shape[0], r.shape[0])
    for i in range(dim):
        for j in range(i + 1):
            pv = p[i, j] if i < p.shape[0] else math.nan
            rv = r[i, j] if i < r.shape[0] else math.nan
            if math.isnan(pv) or math.isnan(rv) or abs(pv - rv) > rtol * max(1.0, abs(rv)):
                out.append({"matrix": name, "gamma": gamma, "row": i + 1, "col": j + 1,
                            "printed": pv, "reconstructed": rv,
                            "kind": "missing" if (math.isnan(pv) or math.isnan(rv))
                            else "mismatch"})
    return out


def sigma_discrepancies(gamma: float, rtol: float = 1e-9) -> List[dict]:
    out = []
    for i in range(6):
        pv, rv = sigma(i, gamma), sigma_reconstructed(i, gamma)
        if abs(pv - rv) > rtol * max(1.0, abs(rv)):
            out.append({"sigma": i, "gamma": gamma, "printed": pv, "reconstructed": rv})
    return out


# ---------------------------------------------------------------------------
# the law E(l)


def _check_ell(ell: int) -> None:
    if int(ell) != ell or ell < 1:
        raise ValueError("ell must be an integer >= 1")


def e_ell_cdf(ell: int, x):
    """CDF of ``E(l)``: Erlang(``l+1``) at rate ``l``, i.e. the limit of ``n U_{l+1,n}/l``."""
    _check_ell(ell)
    x = np.asarray(x, dtype=float)
    out = np.where(x > 0, special.gammainc(ell + 1, ell * np.maximum(x, 0.0)), 0.0)
    return float(out) if out.ndim == 0 else out


def e_ell_cdf_printed(ell: int, x):
    """The printed form, whose sum starts at ``j = 1``."""
    _check_ell(ell)
    x = np.asarray(x, dtype=float)
    lx = ell * np.maximum(x, 0.0)
    j = np.arange(1, ell + 1)
    terms = lx[..., None] ** j / special.factorial(j)
    out = np.where(x >= 0, 1.0 - np.exp(-lx) * terms.sum(axis=-1), 0.0)
    return float(out) if out.ndim == 0 else out


def neg_log_e_cdf(ell: int, y):
    """CDF of ``-log E(l)``."""
    y = np.asarray(y, dtype=float)
    out = 1.0 - e_ell_cdf(ell, np.exp(-y))
    return float(out) if np.ndim(out) == 0 else out


def weibull_e_cdf(ell: int, gamma: float, y):
    """CDF of ``(gamma+1)(1 - E(l)^{1/gamma})``, supported below ``gamma+1``."""
    if not (gamma > 0 and math.isfinite(gamma)):
        raise ValueError("gamma must be finite and positive")
    y = np.asarray(y, dtype=float)
    base = np.clip(1.0 - y / (gamma + 1), 0.0, None)
    out = np.where(y < gamma + 1, 1.0 - e_ell_cdf(ell, base ** gamma), 1.0)
    return float(out) if out.ndim == 0 else out


def e_ell_findings() -> List[dict]:
    """Boundary check of the printed ``E(l)`` CDF."""
    out = []
    for ell in (1, 2, 3, 5):
        printed0 = e_ell_cdf_printed(ell, 0.0)
        out.append({"ell": ell, "x": 0.0, "printed_cdf": printed0,
                    "implemented_cdf": e_ell_cdf(ell, 0.0),
                    "valid": bool(abs(printed0) < 1e-12)})
    return out
