import math

import numpy as np
import pytest
from scipy import stats

from evchar import montecarlo as mc
from evchar.montecarlo import (ExperimentConfig, ExperimentError, McReport, StatSummary,
                               all_passed, compare, is_exponent_rule, ks_distance,
                               resolve_rule, run)
from evchar.models import builtin

PARETO = builtin("pareto", gamma=1.0)


# -- rules and configs ------------------------------------------------------------------

def test_resolve_rule():
    assert resolve_rule("n^0.6", 10**5) == 1000
    assert resolve_rule("n^0.5", 10**4) == 100   # exact powers are not floored away
    assert resolve_rule(" n ^ 0.7 ", 10**5) == 3162
    assert resolve_rule(17, 10**5) == 17
    assert resolve_rule("17", 10**5) == 17
    assert is_exponent_rule("n^0.55") and not is_exponent_rule("12")
    for bad in ("k^0.5", "n**0.5", "", 1.5):
        with pytest.raises(ExperimentError):
            resolve_rule(bad, 100)


def test_config_validation():
    with pytest.raises(ExperimentError):
        ExperimentConfig(PARETO, 10**4, "n^0.6", 1, "T3.1", reps=0)
    with pytest.raises(ExperimentError):
        ExperimentConfig(PARETO, 10**4, "n^0.6", 1, "T9.9", reps=10)
    with pytest.raises(ExperimentError):
        run(ExperimentConfig(PARETO, 10**4, 10, 20, "T3.1", reps=10))


def test_rate_warnings():
    cfg = ExperimentConfig(PARETO, 1000, 200, "n^0.7", "T3.1", reps=20)
    w = cfg.rate_warnings()
    assert any("k/n" in s for s in w) and any("l k^" in s for s in w)
    assert not ExperimentConfig(PARETO, 10**5, "n^0.6", 1, "T3.2", reps=20).rate_warnings()
    assert cfg.fixed_ell is False
    assert ExperimentConfig(PARETO, 10**5, "n^0.6", 2, "T5.1", reps=20).fixed_ell


# -- KS distance -----------------------------------------------------------------------------

def test_ks_from_own_cdf():
    m = 10**4
    x = np.random.default_rng(0).standard_normal(m)
    d = ks_distance(x, stats.norm.cdf)
    assert d < 1.63 / math.sqrt(m)
    assert d == pytest.approx(stats.kstest(x, "norm").statistic, abs=1e-12)


def test_ks_point_mass_and_disjoint():
    assert ks_distance(np.zeros(100), stats.norm.cdf) == pytest.approx(0.5)
    assert ks_distance(np.full(100, -50.0), stats.norm.cdf) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        ks_distance(np.zeros(19), stats.norm.cdf)


# -- verdicts ---------------------------------------------------------------------------------

def _report(var, ks=0.01, mean=0.0, theo=1.0, count=500):
    s = StatSummary("x", count, mean, var, 0.0, ks, "normal", 0.0, theo)
    return McReport("T3.2", {}, {"x": s}, count, 0, [])


def test_compare_examples():
    assert all_passed(compare(_report(1.0)))
    v = {x.check: x for x in compare(_report(2.0))}
    assert not v["var_ratio"].passed and v["var_ratio"].value == 2.0
    v = {x.check: x for x in compare(_report(1.0, ks=0.3))}
    assert not v["ks"].passed and v["ks"].value == 0.3
    v = {x.check: x for x in compare(_report(1.0, mean=0.5))}
    assert not v["mean"].passed
    assert v["mean"].bound == pytest.approx(3 * math.sqrt(1 / 500))
    assert all_passed(compare(_report(1.3), {"var": 0.35}))


# -- runs -------------------------------------------------------------------------------------

def _small(target, model=PARETO, ell=2, reps=30, **kw):
    return ExperimentConfig(model, 10**4, "n^0.6", ell, target, reps=reps, seed=3, **kw)


@pytest.mark.parametrize("target", ["T3.1", "T3.2", "T4.1", "T4.2", "T6.1", "T6.2",
                                    "T5.1", "C5.1", "T6.3", "T6.4", "T6.5"])
@pytest.mark.parametrize("model", [PARETO, builtin("weibull", gamma=1.0),
                                   builtin("weibull", gamma=3.0)], ids=lambda m: f"{m.name}{m.gamma}")
def test_every_target_runs(target, model):
    rep = run(_small(target, model, ell="n^0.3", reps=25))
    assert rep.reps == 25 and rep.excluded == 0
    for s in rep.stats.values():
        assert s.count == 25
        assert math.isfinite(s.mean) and s.var >= 0
        assert 0 <= s.ks <= 1
    assert rep.config["target"] == target
    assert "mu" in rep.extra["centering"]


def test_fixed_ell_extremal_laws():
    rep = run(_small("C5.1", ell=2))
    assert rep.stats["T8_inverse"].law == "-log E(l)"
    rep = run(_small("T5.1", builtin("weibull", gamma=3.0), ell=2))
    assert rep.stats["C_spread"].law.startswith("(g+1)")


def test_joint_target():
    with pytest.warns(UserWarning, match="l-rate"):
        rep = run(_small("T7.1", ell="n^0.45", reps=40))
    assert len(rep.extra["cross_cov"]) == 3 and len(rep.extra["cross_cov"][0]) == 5
    assert rep.extra["max_cross_ratio"] >= 0
    assert isinstance(rep.extra["cross_independent"], bool)
    names = [v.stat for v in compare(rep)]
    assert "cross_block" in names


def test_thmb_target():
    with pytest.warns(UserWarning) as rec:
        rep = run(ExperimentConfig(PARETO, 10**4, "n^0.7", "n^0.55", "ThmB", reps=5, seed=1))
    msgs = " ".join(str(w.message) for w in rec)
    assert "k/n" in msgs and "l-rate" in msgs
    assert sum(rep.extra["label_counts"].values()) == 5


def test_theoretical_variances_recorded():
    rep = run(_small("T3.2", builtin("weibull", gamma=3.0), ell=1, reps=20))
    s = rep.stats["T2_fixed"]
    from evchar.asymptotics import sigma, sigma_reconstructed
    assert s.theo_var == pytest.approx(sigma_reconstructed(1, 3.0))
    assert s.theo_var_printed == pytest.approx(sigma(1, 3.0))


def test_t63_case3_flagged_low_confidence():
    rep = run(_small("T6.3", builtin("weibull", gamma=1.0), ell="n^0.3", reps=20))
    assert rep.extra["confidence"].startswith("low")
    s = rep.stats["T3"]
    assert s.theo_var_printed == pytest.approx(4 * 13 / 3)
    assert "confidence" not in run(_small("T6.3", ell="n^0.3", reps=20)).extra


def test_determinism_and_worker_invariance():
    a = run(_small("T6.1", reps=40))
    b = run(_small("T6.1", reps=40))
    c = run(_small("T6.1", reps=40, workers=3))
    assert a.results() == b.results() == c.results()
    d = run(ExperimentConfig(PARETO, 10**4, "n^0.6", 2, "T6.1", reps=40, seed=4))
    assert d.results() != a.results()


def test_worker_env(monkeypatch):
    monkeypatch.setenv(mc.WORKERS_ENV, "2")
    assert mc._workers(_small("T3.1")) == 2
    monkeypatch.setenv(mc.WORKERS_ENV, "junk")
    assert mc._workers(_small("T3.1")) == 1


def test_degenerate_exclusion(monkeypatch):
    real = mc._replicate_values

    def flaky(cfg, c, i):
        return None if i in cfg_drop else real(cfg, c, i)

    monkeypatch.setattr(mc, "_replicate_values", flaky)
    cfg_drop = {0}
    rep = run(_small("T3.2", reps=200))
    assert rep.excluded == 1 and rep.stats["T2_fixed"].count == 199
    cfg_drop = {0, 1, 2}
    with pytest.raises(ExperimentError):
        run(_small("T3.2", reps=200))
