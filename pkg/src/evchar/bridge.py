"""Brownian bridge functionals and their exact Gaussian covariances.

For a bridge ``B`` and ``S = 1 - G``,

* ``N0(k, l) = (n/k)^{1/2} int_{x_n}^{z_n} B(S(t)) dt / R_1(x_n)``
* ``N3(k, l) = (n/k)^{1/2} int_{x_n}^{z_n} (t - x_n) B(S(t)) dt / R_2(x_n)``
* ``N2(m)    = -(n/m)^{1/2} B(m/n)``

``R_p(x_n)`` is the endpoint functional.  Integrals are exact for the path
interpolated linearly in ``t`` between the evaluation nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .asymptotics import BaseCov, CovMatrix, Provenance, Regime, r_p, regime_of
from .models import TailModel, quantile_g, survival_g

DEFAULT_NODES = 4096


class ResolutionError(ValueError):
    """The bridge path is too coarse to resolve ``B`` near ``l/n``."""


@dataclass(frozen=True)
class BridgePath:
    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        g, v = np.asarray(self.grid, dtype=float), np.asarray(self.values, dtype=float)
        if g.shape != v.shape or g.ndim != 1 or g.size < 3:
            raise ValueError("grid and values must be matching 1-d arrays")
        if g[0] != 0.0 or g[-1] != 1.0 or np.any(np.diff(g) <= 0):
            raise ValueError("grid must increase from 0 to 1")

    @property
    def m(self) -> int:
        return self.grid.size - 1

    def __add__(self, other: "BridgePath") -> "BridgePath":
        return BridgePath(self.grid, self.values + other.values)

    def scale(self, a: float) -> "BridgePath":
        return BridgePath(self.grid, a * self.values)


def _bridge_from_grid(grid: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # W on the grid from independent increments, then pin: B = W - t W(1).
    dt = np.diff(grid)
    w = np.concatenate(([0.0], np.cumsum(rng.standard_normal(dt.size) * np.sqrt(dt))))
    b = w - grid * w[-1]
    b[0] = 0.0
    b[-1] = 0.0
    return b


def sample_bridge(m: int, seed) -> BridgePath:
    """A bridge on the uniform grid ``0, 1/m, ..., 1``."""
    if int(m) != m or m < 2:
        raise ValueError("m must be an integer >= 2")
    grid = np.linspace(0.0, 1.0, int(m) + 1)
    return BridgePath(grid, _bridge_from_grid(grid, np.random.default_rng(seed)))


def sample_bridge_on(nodes: np.ndarray, seed) -> BridgePath:
    """A bridge sampled exactly at arbitrary interior nodes (plus 0 and 1)."""
    nodes = np.unique(np.asarray(nodes, dtype=float))
    if np.any(nodes <= 0) or np.any(nodes >= 1):
        raise ValueError("nodes must lie strictly inside (0, 1)")
    grid = np.concatenate(([0.0], nodes, [1.0]))
    return BridgePath(grid, _bridge_from_grid(grid, np.random.default_rng(seed)))


@dataclass(frozen=True)
class FunctionalDraw:
    n0: float
    n2k: float
    n2l: float
    n3: float
    model: str
    n: int
    k: int
    ell: int


@dataclass(frozen=True)
class _Design:
    """Evaluation nodes and normalizers shared by all draws of one window."""

    u: np.ndarray  # ascending, u[0] = l/n, u[-1] = k/n
    t: np.ndarray  # t = G^{-1}(1-u), descending
    r1: float
    r2: float
    n: int
    k: int
    ell: int


def u_nodes(n: int, k: int, ell: int, points: int = DEFAULT_NODES) -> np.ndarray:
    return np.unique(np.concatenate((np.geomspace(ell / n, k / n, points),
                                     [ell / n, k / n])))


def design(model: TailModel, n: int, k: int, ell: int,
           points: int = DEFAULT_NODES) -> _Design:
    if not 1 <= ell < k < n:
        raise ValueError("need 1 <= ell < k < n")
    u = u_nodes(n, k, ell, points)
    t = np.asarray(quantile_g(model, u), dtype=float)
    return _Design(u, t, r_p(model, 1, k / n), r_p(model, 2, k / n), n, k, ell)


def _segment_weights(t: np.ndarray, x: float) -> Tuple[np.ndarray, np.ndarray]:
    """Node weights of ``int B dt`` and ``int (t-x) B dt`` for piecewise-linear B.

    ``t`` is descending (nodes ordered by increasing u); integration runs over
    increasing t.
    """
    a, b = t[1:], t[:-1]  # segment from a (larger u) to b, a < b
    h = b - a
    w0 = np.zeros_like(t)
    w3 = np.zeros_like(t)
    # int_a^b B = h (B_a + B_b)/2
    w0[1:] += h / 2
    w0[:-1] += h / 2
    # int_a^b (t-x) B with B linear: h[(a-x)(B_a+B_b)/2 + h(B_a + 2 B_b)/6]
    w3[1:] += h * (a - x) / 2 + h * h / 6
    w3[:-1] += h * (a - x) / 2 + h * h / 3
    return w0, w3


def _interp_path(path: BridgePath, u: np.ndarray) -> np.ndarray:
    return np.interp(u, path.grid, path.values)


def check_resolution(path: BridgePath, u: np.ndarray) -> None:
    """Each target ``u`` must be a node or sit in a grid gap of width ``<= u/10``."""
    g = path.grid
    idx = np.searchsorted(g, u)
    on_node = (idx < g.size) & (g[np.minimum(idx, g.size - 1)] == u)
    lo = g[np.maximum(idx - 1, 0)]
    hi = g[np.minimum(idx, g.size - 1)]
    # relative slack absorbs rounding of grid points such as j/m
    bad = ~on_node & (hi - lo > u / 10 * (1 + 1e-9))
    if np.any(bad):
        worst = float(u[bad].min())
        raise ResolutionError(f"grid too coarse to resolve the bridge at u={worst:.3g}; "
                              f"refine to spacing <= u/10")


def _evaluate(des: _Design, b_nodes: np.ndarray) -> np.ndarray:
    """Functionals for rows of bridge values at ``des.u``; returns (N0, N3, N2k, N2l)."""
    x = des.t[-1]
    w0, w3 = _segment_weights(des.t, x)
    root = math.sqrt(des.n / des.k)
    # Row-wise reductions rather than a matrix product: BLAS kernels vary with
    # the batch shape, and each draw must not depend on its batch.
    n0 = root * np.sum(b_nodes * w0, axis=-1) / des.r1
    n3 = root * np.sum(b_nodes * w3, axis=-1) / des.r2
    n2k = -root * b_nodes[..., -1]
    n2l = -math.sqrt(des.n / des.ell) * b_nodes[..., 0]
    return np.stack([n0, n3, n2k, n2l], axis=-1)


def functionals(path: BridgePath, model: TailModel, n: int, k: int, ell: int,
                points: int = DEFAULT_NODES) -> FunctionalDraw:
    des = design(model, n, k, ell, points)
    check_resolution(path, des.u)
    n0, n3, n2k, n2l = _evaluate(des, _interp_path(path, des.u))
    return FunctionalDraw(float(n0), float(n2k), float(n2l), float(n3),
                          model.name, n, k, ell)


def n3_integral_nested(t: np.ndarray, b: np.ndarray) -> float:
    """``int_x^z dy int_y^z B dt`` for piecewise-linear B, integrated as nested.

    ``t`` ascending from ``x`` to ``z``.  The inner integral is piecewise
    quadratic, so Simpson's rule on each segment is exact.
    """
    t = np.asarray(t, dtype=float)
    b = np.asarray(b, dtype=float)
    h = np.diff(t)
    seg = h * (b[:-1] + b[1:]) / 2
    inner = np.concatenate((np.cumsum(seg[::-1])[::-1], [0.0]))  # I(t_i) = int_{t_i}^z B
    b_mid = (b[:-1] + b[1:]) / 2
    inner_mid = inner[1:] + (h / 2) * (b_mid + b[1:]) / 2
    return float(np.sum(h / 6 * (inner[:-1] + 4 * inner_mid + inner[1:])))


def n3_integral_collapsed(t: np.ndarray, b: np.ndarray) -> float:
    """``int_x^z (t - x) B dt`` for piecewise-linear B (``t`` ascending)."""
    t = np.asarray(t, dtype=float)
    _, w3 = _segment_weights(t[::-1], t[0])
    return float(np.asarray(b, dtype=float)[::-1] @ w3)


def draw_seed(seed, i: int) -> np.random.SeedSequence:
    """Seed of draw ``i``; independent of batching and execution order."""
    return np.random.SeedSequence(entropy=seed, spawn_key=(int(i),))


def functional_batch(model: TailModel, n: int, k: int, ell: int, draws: int, seed,
                     points: int = DEFAULT_NODES) -> np.ndarray:
    """``draws x 4`` array of ``(N0, N3, N2k, N2l)`` with exact node sampling."""
    if draws < 1:
        raise ValueError("draws must be positive")
    des = design(model, n, k, ell, points)
    grid = np.concatenate(([0.0], des.u, [1.0]))
    dt = np.diff(grid)
    sq = np.sqrt(dt)
    out = np.empty((draws, 4))
    chunk = 512
    for start in range(0, draws, chunk):
        stop = min(start + chunk, draws)
        z = np.empty((stop - start, dt.size))
        for r, i in enumerate(range(start, stop)):
            z[r] = np.random.default_rng(draw_seed(seed, i)).standard_normal(dt.size)
        w = np.cumsum(z * sq, axis=1)
        b = w[:, :-1] - des.u * w[:, -1:]
        out[start:stop] = _evaluate(des, b)
    return out


# ---------------------------------------------------------------------------
# exact covariances


def exact_cov(model: TailModel, n: int, k: int, ell: int) -> CovMatrix:
    """Covariance of ``(N0, N3, N2k)`` from closed forms in ``R_p``.

    With ``u_x = k/n``, ``R_p = R_p(x_n, z_n)`` and ``R_p^e = R_p(x_n)``:
    ``Var N0 = (2 R_2 - u_x R_1^2)/R_1^{e2}``,
    ``Cov(N0, N3) = (3 R_3 - u_x R_1 R_2)/(R_1^e R_2^e)``,
    ``Var N3 = (6 R_4 - u_x R_2^2)/R_2^{e2}``,
    ``Cov(N0, N2k) = -(1 - u_x) R_1/R_1^e``, ``Cov(N3, N2k) = -(1 - u_x) R_2/R_2^e``,
    ``Var N2k = 1 - u_x``.  ``ell = 0`` places ``z_n`` at the endpoint.
    """
    if not 0 <= ell < k < n:
        raise ValueError("need 0 <= ell < k < n")
    ux, uz = k / n, ell / n
    r = {p: r_p(model, p, ux, uz) for p in (1, 2, 3, 4)}
    e1, e2 = r_p(model, 1, ux), r_p(model, 2, ux)
    v0 = (2 * r[2] - ux * r[1] ** 2) / e1 ** 2
    c03 = (3 * r[3] - ux * r[1] * r[2]) / (e1 * e2)
    v3 = (6 * r[4] - ux * r[2] ** 2) / e2 ** 2
    c02 = -(1 - ux) * r[1] / e1
    c32 = -(1 - ux) * r[2] / e2
    m = np.array([[v0, c03, c02], [c03, v3, c32], [c02, c32, 1 - ux]])
    return CovMatrix("bridge_exact", m, Provenance.QUADRATURE,
                     _regime(model), model.regime_gamma, ("N0", "N3", "N2k"))


def _regime(model: TailModel) -> Regime:
    g = model.regime_gamma
    return Regime.GAMMA_INF if g == math.inf else (
        Regime.GAMMA_GT2 if g > 2 else Regime.GAMMA_LT2)


def exact_cov_kernel(model: TailModel, n: int, k: int, ell: int,
                     order: int = 96) -> CovMatrix:
    """The same covariance by tensor Gauss-Legendre quadrature of the kernel.

    ``h(s, t) = min(S(s), S(t)) - S(s) S(t)`` is integrated over the triangle
    ``s < t`` (where it equals ``S(t)(1 - S(s))``), mapped to the square so the
    integrand is smooth.  Independent of the ``R_p`` closed forms.
    """
    if not 1 <= ell < k < n:
        raise ValueError("need 1 <= ell < k < n")
    ux, uz = k / n, ell / n
    x, z = quantile_g(model, ux), quantile_g(model, uz)
    nodes, weights = np.polynomial.legendre.leggauss(order)
    # Sub-panels in t keep the exponential decay of S well resolved.
    panels = np.linspace(x, z, 9)
    tt, wt = [], []
    for a, b in zip(panels[:-1], panels[1:]):
        tt.append((b - a) / 2 * nodes + (a + b) / 2)
        wt.append((b - a) / 2 * weights)
    tt, wt = np.concatenate(tt), np.concatenate(wt)
    st = np.asarray(survival_g(model, tt), dtype=float)
    # Inner integral over s in [x, t] of (1 - S(s)) g(s) for g in {1, s - x}.
    frac = (nodes + 1) / 2
    ss = x + (tt[:, None] - x) * frac[None, :]
    ws = (tt[:, None] - x) * weights[None, :] / 2
    one_minus = 1.0 - np.asarray(survival_g(model, ss.ravel()), dtype=float).reshape(ss.shape)
    inner0 = np.sum(ws * one_minus, axis=1)
    inner1 = np.sum(ws * one_minus * (ss - x), axis=1)
    dx = tt - x
    # double integrals over the full square = 2 x (triangle) for symmetric
    # kernels; the cross term of weights g(s), g(t) symmetrizes.
    i00 = 2 * np.sum(wt * st * inner0)
    i33 = 2 * np.sum(wt * st * dx * inner1)
    i03 = np.sum(wt * st * (dx * inner0 + inner1))
    j0 = np.sum(wt * st) * (1 - ux)
    j3 = np.sum(wt * st * dx) * (1 - ux)
    e1, e2 = r_p(model, 1, ux), r_p(model, 2, ux)
    scale = n / k
    m = np.array([[scale * i00 / e1 ** 2, scale * i03 / (e1 * e2), -scale * j0 / e1],
                  [scale * i03 / (e1 * e2), scale * i33 / e2 ** 2, -scale * j3 / e2],
                  [-scale * j0 / e1, -scale * j3 / e2, 1 - ux]])
    return CovMatrix("bridge_kernel", m, Provenance.QUADRATURE,
                     _regime(model), model.regime_gamma, ("N0", "N3", "N2k"))


def empirical_cov(samples: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Sample covariance and the Monte Carlo standard error of each entry."""
    s = np.asarray(samples, dtype=float)
    m = s.shape[0]
    c = s - s.mean(axis=0)
    prods = c[:, :, None] * c[:, None, :]
    cov = prods.sum(axis=0) / (m - 1)
    se = prods.std(axis=0, ddof=1) / math.sqrt(m)
    return cov, se


@dataclass(frozen=True)
class StabilityResult:
    values: Tuple[np.ndarray, ...]  # exact_cov entries at successive halvings of k/n
    ratios: Tuple[float, ...]
    stable: bool
    limit: np.ndarray


def stability(model: TailModel, n: int, k: int, ell: int, halvings: int = 3,
              rtol: float = 0.01) -> StabilityResult:
    """Recompute :func:`exact_cov` while halving ``k/n`` (``n`` doubled, ``k, l`` fixed)."""
    vals = []
    for h in range(halvings + 1):
        vals.append(exact_cov(model, n * 2 ** h, k, ell).entries)
    ratios = tuple(float(np.max(np.abs(b - a) / np.maximum(np.abs(a), 1e-12)))
                   for a, b in zip(vals[:-1], vals[1:]))
    return StabilityResult(tuple(vals), ratios, all(r < rtol for r in ratios), vals[0])


def base_from_oracle(model: TailModel, n: int, k: int, ell: int = 0) -> BaseCov:
    """Base covariances for matrix reconstruction from the exact oracle."""
    return BaseCov.from_matrix(exact_cov(model, n, k, ell).entries)
