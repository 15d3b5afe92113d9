"""Tail models on the log scale and reproducible inverse-transform sampling.

Every model is described through the quantile function of ``G(x) = F(e^x)``,
the distribution function of ``Y = log X``.  Three families are supported:

* ``Frechet``: ``G^{-1}(1-u) = -log(u)/gamma + log c + log(1+f(u)) + I_b(u)``
* ``Weibull``: ``y0 - G^{-1}(1-u) = c (1+f(u)) u^{1/gamma} exp(I_b(u))``
* ``Gumbel``:  ``G^{-1}(1-u) = d - s(u) + int_u^1 s(t)/t dt`` with
  ``s(u) = c (1+f(u)) exp(I_b(u))``

where ``I_b(u) = int_u^1 b(t)/t dt``.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy import integrate, optimize, special

ArrayLike = Union[float, np.ndarray]

U_MIN = 2.0 ** -64
# 1 - 2**-64 is not representable in double precision; this is the largest
# double below one.
U_MAX = float(np.nextafter(1.0, 0.0))

_B_RTOL = 1e-10


class ModelError(ValueError):
    """Invalid model construction or evaluation."""


class QuadratureError(ArithmeticError):
    """Adaptive quadrature did not reach the requested tolerance."""


class Domain(str, enum.Enum):
    FRECHET = "Frechet"
    WEIBULL = "Weibull"
    GUMBEL = "Gumbel"


class RegularityClass(str, enum.Enum):
    GAMMA0 = "Gamma0"
    GAMMA1 = "Gamma1"
    GAMMA2 = "Gamma2"
    NONE = "None"


def _zero(u):
    return np.zeros_like(np.asarray(u, dtype=float))


@dataclass(frozen=True)
class PerturbationPair:
    """The pair ``(f, b)`` of a representation, both vanishing at zero.

    ``b_integral`` is an optional closed form of ``u -> int_u^1 b(t)/t dt``.
    Without it the integral is computed by adaptive quadrature.
    """

    f: Callable = _zero
    b: Callable = _zero
    regularity_class: RegularityClass = RegularityClass.GAMMA0
    b_integral: Optional[Callable] = None
    label: str = "zero"

    def __post_init__(self):
        object.__setattr__(self, "regularity_class",
                           RegularityClass(self.regularity_class))

    @property
    def is_zero(self) -> bool:
        return self.label == "zero"

    def integral_b(self, u: ArrayLike) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.b_integral is not None:
            return np.asarray(self.b_integral(u), dtype=float)
        if self.b is _zero:
            return np.zeros_like(u)
        return _quad_b_integral(self.b, u)

    def check_vanishing(self, envelope: float = 1.0) -> bool:
        """Grid check that ``|f|`` and ``|b|`` stay below ``envelope`` near 0
        and that ``1 + f > 0``."""
        grid = 10.0 ** -np.arange(1, 13)
        fv = np.abs(np.asarray(self.f(grid), dtype=float))
        bv = np.abs(np.asarray(self.b(grid), dtype=float))
        tail = max(fv[5:].max(), bv[5:].max())
        return bool(tail <= envelope and np.all(1.0 + np.asarray(self.f(grid)) > 0))


def _quad_b_integral(b: Callable, u: np.ndarray) -> np.ndarray:
    # v = log(1/t) turns the integrand into b(exp(-v)) on [0, log(1/u)].
    out = np.empty(u.shape, dtype=float)
    flat = u.ravel()
    res = out.ravel()
    for i, ui in enumerate(flat):
        upper = -math.log(ui)
        if upper == 0.0:
            res[i] = 0.0
            continue
        val, err = integrate.quad(lambda v: float(b(math.exp(-v))), 0.0, upper,
                                  epsrel=_B_RTOL, epsabs=0.0, limit=200)
        if not np.isfinite(val) or err > max(1e-8 * abs(val), 1e-13):
            raise QuadratureError(f"b-integral did not converge at u={ui!r}")
        res[i] = val
    return out


@dataclass(frozen=True)
class TailModel:
    """A distribution on the log scale given by its quantile representation."""

    domain: Domain
    gamma: float = math.inf
    c: float = 1.0
    d: float = 0.0
    perturbation: PerturbationPair = field(default_factory=PerturbationPair)
    y0: float = math.inf
    name: str = "custom"
    s_integral: Optional[Callable] = None  # closed form of int_u^1 s(t)/t dt
    strict: bool = True

    def __post_init__(self):
        object.__setattr__(self, "domain", Domain(self.domain))
        if not self.c > 0:
            raise ModelError("c must be positive")
        if self.domain in (Domain.FRECHET, Domain.WEIBULL):
            if not (self.gamma > 0 and math.isfinite(self.gamma)):
                raise ModelError("gamma must be a positive finite number")
        if self.domain is Domain.WEIBULL and not math.isfinite(self.y0):
            raise ModelError("Weibull models need a finite upper endpoint y0")
        if self.domain is not Domain.WEIBULL and math.isfinite(self.y0):
            raise ModelError("y0 is only meaningful for Weibull models")
        self._validate_grid()

    # The extremal index used by the asymptotic formulas: finite gamma for the
    # bounded family, infinity otherwise.
    @property
    def regime_gamma(self) -> float:
        return self.gamma if self.domain is Domain.WEIBULL else math.inf

    @property
    def regularity_class(self) -> RegularityClass:
        return self.perturbation.regularity_class

    def s(self, u: ArrayLike) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        p = self.perturbation
        return self.c * (1.0 + np.asarray(p.f(u), dtype=float)) * np.exp(p.integral_b(u))

    def _s_integral(self, u: np.ndarray) -> np.ndarray:
        if self.s_integral is not None:
            return np.asarray(self.s_integral(u), dtype=float)
        if self.perturbation.is_zero:
            return -self.c * np.log(u)
        out = np.empty(u.shape, dtype=float)
        flat = out.ravel()
        for i, ui in enumerate(u.ravel()):
            upper = -math.log(ui)
            val, err = integrate.quad(lambda v: float(self.s(math.exp(-v))), 0.0,
                                      upper, epsrel=_B_RTOL, epsabs=0.0, limit=200)
            if not np.isfinite(val) or err > max(1e-8 * abs(val), 1e-13):
                raise QuadratureError(f"s-integral did not converge at u={ui!r}")
            flat[i] = val
        return out

    @property
    def monotone(self) -> bool:
        """Whether the quantile passes the 1024-point monotonicity check."""
        grid = np.logspace(-12, math.log10(U_MAX), 1024)
        return bool(np.all(np.diff(quantile_g(self, grid)) <= 0))

    def _validate_grid(self):
        grid = np.logspace(-12, math.log10(U_MAX), 1024)
        q = quantile_g(self, grid)
        if not np.all(np.isfinite(q)):
            raise ModelError("quantile is not finite on the check grid")
        if np.any(np.diff(q) > 0):
            msg = "quantile G^{-1}(1-u) is not nonincreasing in u"
            if self.strict:
                raise ModelError(msg)
            warnings.warn(f"{self.name}: {msg}; draws follow exp(Q(U)) for a "
                          "non-monotone Q", stacklevel=3)
        if q[-1] < -1e-9:
            raise ModelError("G^{-1}(1-u) < 0 near u=1, so X >= 1 fails")
        if self.domain is Domain.WEIBULL and np.any(weibull_gap(self, grid) <= 0):
            raise ModelError("y0 - G^{-1}(1-u) must stay positive")


def quantile_g(model: TailModel, u: ArrayLike) -> ArrayLike:
    """Return ``G^{-1}(1-u)`` for ``u`` in the open unit interval."""
    scalar = np.ndim(u) == 0
    u = np.asarray(u, dtype=float)
    if np.any(~(u > 0)) or np.any(~(u < 1)):
        raise ModelError("u must lie in the open interval (0, 1)")
    p = model.perturbation
    if model.domain is Domain.FRECHET:
        q = -np.log(u) / model.gamma + math.log(model.c)
        if not p.is_zero:
            q = q + np.log1p(np.asarray(p.f(u), dtype=float)) + p.integral_b(u)
    elif model.domain is Domain.WEIBULL:
        q = model.y0 - weibull_gap(model, u)
    else:
        q = model.d - model.s(u) + model._s_integral(u)
    if not np.all(np.isfinite(q)):
        raise ModelError("quantile evaluated to a non-finite value")
    return float(q) if scalar else q


def weibull_gap(model: TailModel, u: ArrayLike) -> np.ndarray:
    """``y0 - G^{-1}(1-u)`` computed directly, free of cancellation near ``y0``."""
    u = np.asarray(u, dtype=float)
    p = model.perturbation
    gap = model.c * u ** (1.0 / model.gamma)
    if not p.is_zero:
        gap = gap * (1.0 + np.asarray(p.f(u), dtype=float)) * np.exp(p.integral_b(u))
    return gap


def survival_g(model: TailModel, t: ArrayLike) -> ArrayLike:
    """Return ``1 - G(t)`` by inverting the quantile function.

    Closed forms are used for the unperturbed families; otherwise a bracketing
    root finder works on ``log u``.
    """
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    p = model.perturbation
    out = np.empty_like(t)
    if p.is_zero and model.domain is Domain.FRECHET:
        out = np.minimum(1.0, np.exp(-model.gamma * (t - math.log(model.c))))
    elif p.is_zero and model.domain is Domain.WEIBULL:
        gap = np.clip((model.y0 - t) / model.c, 0.0, None)
        out = np.minimum(1.0, gap ** model.gamma)
    elif p.is_zero and model.domain is Domain.GUMBEL and model.s_integral is None:
        out = np.minimum(1.0, np.exp(-(t - model.d + model.c) / model.c))
    else:
        lo, hi = math.log(U_MIN), math.log(U_MAX)
        q_lo = quantile_g(model, U_MIN)
        q_hi = quantile_g(model, U_MAX)
        for i, ti in enumerate(t):
            if ti >= q_lo:
                out[i] = 0.0 if ti > q_lo else U_MIN
            elif ti <= q_hi:
                out[i] = 1.0
            else:
                r = optimize.brentq(lambda a: quantile_g(model, math.exp(a)) - ti,
                                    lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps,
                                    maxiter=500)
                out[i] = math.exp(r)
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class SampleBatch:
    """An i.i.d. sample with cached ascending order statistics.

    ``y_sorted`` is ``log(x_sorted)``; all statistics consume it.
    """

    n: int
    x_sorted: np.ndarray
    y_sorted: np.ndarray
    seed: Optional[object] = None

    @classmethod
    def from_values(cls, x, seed=None) -> "SampleBatch":
        x = np.sort(np.asarray(x, dtype=float))
        if x.ndim != 1 or x.size < 2:
            raise ModelError("a sample needs at least two values")
        if not np.all(np.isfinite(x)):
            raise ModelError("sample contains non-finite values")
        if x[0] < 1.0:
            raise ModelError("all sample values must satisfy X >= 1")
        x.setflags(write=False)
        y = np.log(x)
        y.setflags(write=False)
        return cls(n=int(x.size), x_sorted=x, y_sorted=y, seed=seed)


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def draw(model: TailModel, n: int, seed) -> SampleBatch:
    """Draw ``n`` values ``X = exp(G^{-1}(1-U))`` with ``U`` uniform."""
    if int(n) != n or n < 2:
        raise ModelError("n must be an integer >= 2")
    n = int(n)
    rng = as_generator(seed)
    u = np.clip(rng.random(n), U_MIN, U_MAX)
    y = quantile_g(model, u)
    # Rounding can push values at u ~ 1 a hair below zero.
    if np.min(y) < -1e-12:
        raise ModelError("model produced log-values below zero")
    x = np.sort(np.exp(np.maximum(y, 0.0)))
    x.setflags(write=False)
    ys = np.log(x)
    ys.setflags(write=False)
    return SampleBatch(n=n, x_sorted=x, y_sorted=ys, seed=seed)


# ---------------------------------------------------------------------------
# builtin models


def _loglog_b(sign: float, shift: float):
    # sign / log(shift + log(1/t)) behaves like sign / log log(1/t) at zero
    # and stays bounded on the whole interval.
    def b(t):
        t = np.asarray(t, dtype=float)
        return sign / np.log(shift - np.log(t))

    def integral(u):
        u = np.asarray(u, dtype=float)
        # int_0^L dv / log(shift + v) = li(shift + L) - li(shift)
        return sign * (special.expi(np.log(shift - np.log(u))) -
                       special.expi(math.log(shift)))

    return b, integral


def _capped_power_b(a: float, cap: float):
    # b(t) = min(t, cap)^a: equal to t^a near zero, and small enough on the
    # rest of the interval to keep the bounded-family quantile monotone.
    if not 0 < cap <= 1:
        raise ModelError("cap must lie in (0, 1]")
    ca = cap ** a

    def b(t):
        return np.minimum(np.asarray(t, dtype=float), cap) ** a

    def integral(u):
        u = np.asarray(u, dtype=float)
        high = ca * -np.log(u)
        low = ca * -math.log(cap) + (ca - u ** a) / a
        return np.where(u >= cap, high, low)

    return b, integral


def _power_f(a: float, rho: float):
    def f(u):
        return a * np.asarray(u, dtype=float) ** rho
    return f


def builtin(name: str, **params) -> TailModel:
    """Construct one of the named models.

    Names: ``pareto``, ``oscillatory``, ``power``, ``t_b``, ``loglog_b``,
    ``power_b``, ``gumbel``, ``weibull``.
    """
    name = name.lower()
    gamma_given = params.pop("gamma", None)
    default_gamma = 2.0 if name in ("t_b", "loglog_b", "power_b") else 1.0
    gamma = default_gamma if gamma_given is None else float(gamma_given)
    c = float(params.pop("c", 1.0))
    if c <= 0:
        raise ModelError("c must be positive")
    if gamma <= 0:
        raise ModelError("gamma must be positive")

    if name == "pareto":
        model = TailModel(Domain.FRECHET, gamma=gamma, c=c, name="pareto")
    elif name == "oscillatory":
        def f(u):
            u = np.asarray(u, dtype=float)
            return u * np.sin(1.0 / u)
        pert = PerturbationPair(f=f, regularity_class=RegularityClass.NONE,
                                label="u*sin(1/u)")
        model = TailModel(Domain.FRECHET, gamma=gamma, c=c, perturbation=pert,
                          name="oscillatory", strict=False)
    elif name == "power":
        a = float(params.pop("a", 0.1))
        rho = float(params.pop("rho", 2.0))
        if rho <= 0 or abs(a) >= 1:
            raise ModelError("power perturbation needs rho > 0 and |a| < 1")
        pert = PerturbationPair(f=_power_f(a, rho),
                                regularity_class=RegularityClass.GAMMA0,
                                label=f"{a}*u^{rho}")
        model = TailModel(Domain.FRECHET, gamma=gamma, c=c, perturbation=pert,
                          name="power")
    elif name in ("t_b", "loglog_b", "power_b"):
        domain = Domain(params.pop("domain", "Weibull"))
        if name in ("t_b", "power_b"):
            a = 1.0 if name == "t_b" else float(params.pop("a", 2.0))
            if name == "power_b" and a <= 1:
                raise ModelError("power_b needs a > 1")
            cap = float(params.pop("cap", 0.25))
            b, integral = _capped_power_b(a, cap)
            pert = PerturbationPair(b=b, b_integral=integral,
                                    regularity_class=RegularityClass.GAMMA0,
                                    label="b(t)=t" if a == 1.0 else f"b(t)=t^{a}")
        else:
            sign = float(params.pop("sign", 1.0))
            if sign not in (1.0, -1.0):
                raise ModelError("sign must be +1 or -1")
            shift = float(params.pop("shift", math.e ** 3))
            if shift <= math.e:
                raise ModelError("shift must exceed e")
            b, integral = _loglog_b(sign, shift)
            pert = PerturbationPair(b=b, b_integral=integral,
                                    regularity_class=RegularityClass.GAMMA0,
                                    label=f"b(t)={'+' if sign > 0 else '-'}1/loglog(1/t)")
        if domain is Domain.WEIBULL:
            y0 = float(params.pop("y0", 2.0 * c))
            model = TailModel(Domain.WEIBULL, gamma=gamma, c=c, y0=y0,
                              perturbation=pert, name=name)
        elif domain is Domain.FRECHET:
            model = TailModel(Domain.FRECHET, gamma=gamma, c=c, perturbation=pert,
                              name=name)
        else:
            d = float(params.pop("d", c))
            model = TailModel(Domain.GUMBEL, c=c, d=d, perturbation=pert, name=name)
    elif name == "gumbel":
        d = float(params.pop("d", 1.0))
        theta = float(params.pop("theta", 0.0))
        if theta < 0:
            raise ModelError("theta must be nonnegative")
        if theta == 0.0:
            model = TailModel(Domain.GUMBEL, c=c, d=d, name="gumbel")
        else:
            # s(u) = c (1 + log(1/u))^{-theta}, a slowly varying s tending to 0.
            pert = PerturbationPair(
                b=lambda t: -theta / (1.0 - np.log(np.asarray(t, dtype=float))),
                b_integral=lambda u: -theta * np.log1p(-np.log(np.asarray(u, dtype=float))),
                regularity_class=RegularityClass.GAMMA0,
                label=f"b(t)=-{theta}/(1+log(1/t))")

            def s_int(u):
                L = -np.log(np.asarray(u, dtype=float))
                if theta == 1.0:
                    return c * np.log1p(L)
                return c * ((1.0 + L) ** (1.0 - theta) - 1.0) / (1.0 - theta)

            model = TailModel(Domain.GUMBEL, c=c, d=d, perturbation=pert,
                              s_integral=s_int, name="gumbel")
    elif name == "weibull":
        y0 = float(params.pop("y0", c))
        model = TailModel(Domain.WEIBULL, gamma=gamma, c=c, y0=y0, name="weibull")
    else:
        raise ModelError(f"unknown builtin model {name!r}")
    if params:
        raise ModelError(f"unused parameters for {name}: {sorted(params)}")
    return model


BUILTIN_NAMES = ("pareto", "oscillatory", "power", "t_b", "loglog_b", "power_b",
                 "gumbel", "weibull")
