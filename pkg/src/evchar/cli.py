"""Command-line entry point.

Subcommands: ``simulate``, ``estimate``, ``verify``, ``bridge-oracle`` and
``detect``.  Exit status is 0 on success, 2 when a verification fails and 1 on
usage or data errors.
"""

from __future__ import annotations

import argparse
import json
import datetime as _dt
import math
import sys
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from . import asymptotics as asy
from . import bridge, montecarlo
from .detect import detect
from .estimators import WindowConfig, WindowError, stat_vector
from .models import BUILTIN_NAMES, ModelError, SampleBatch, builtin, draw

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# ---------------------------------------------------------------------------
# serialization


def _fmt_float(v: float) -> str:
    if not math.isfinite(v):
        return "null"
    s = format(v, ".17g")
    # keep integral floats (and -0.0) readable back as floats
    return s if any(ch in s for ch in ".e") else s + ".0"


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with floats written to 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_quote(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{pad}{dumps(v, indent, _level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist(), indent, _level)
    return _quote(str(obj))


def _quote(s: str) -> str:
    return json.dumps(s)


def _quote_compact(obj) -> str:
    return " ".join(dumps(obj, indent=0).split())


def read_sample(path: str) -> SampleBatch:
    """One value ``>= 1`` per line; blank lines, ``#`` comments and an ``x`` header skipped."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    values = []
    for no, raw in enumerate(lines, start=1):
        s = raw.split("#", 1)[0].strip().rstrip(",")
        if not s or (not values and s.lower() == "x"):
            continue
        try:
            v = float(s)
        except ValueError:
            raise DataError(f"{path}:{no}: not a number: {raw.strip()!r}") from None
        if not math.isfinite(v):
            raise DataError(f"{path}:{no}: non-finite value {raw.strip()!r}")
        if v < 1:
            raise DataError(f"{path}:{no}: value {v!r} < 1 violates the assumption X >= 1")
        values.append(v)
    if len(values) < 2:
        raise DataError(f"{path}: need at least two values")
    return SampleBatch.from_values(values)


def write_sample(path: str, x: np.ndarray, header: bool,
                 manifest: Optional["RunManifest"] = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if manifest is not None:
            # A comment line, so readers of the sample skip it.
            fh.write("# manifest " + _quote_compact(manifest.as_dict()) + "\n")
        if header:
            fh.write("x\n")
        for v in x:
            fh.write(format(float(v), ".17g") + "\n")


# ---------------------------------------------------------------------------
# manifest


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="microseconds")


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: Optional[int]
    version: str = __version__
    started: str = field(default_factory=_now)
    finished: Optional[str] = None
    outputs: List[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"command": self.command, "config": self.config, "seed": self.seed,
                "version": self.version, "started": self.started,
                "finished": self.finished, "outputs": list(self.outputs)}


def _emit(doc: dict, out: Optional[str], manifest: RunManifest) -> None:
    if out:
        manifest.outputs.append(out)
    manifest.finished = _now()
    doc = {"manifest": manifest.as_dict(), **doc}
    text = dumps(doc) + "\n"
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


_MODEL_PARAMS = (("gamma", float), ("c", float), ("d", float), ("y0", float),
                 ("theta", float), ("a", float), ("rho", float), ("sign", float),
                 ("cap", float), ("shift", float), ("domain", str))


def _add_model(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", required=True, choices=BUILTIN_NAMES)
    for name, typ in _MODEL_PARAMS:
        p.add_argument(f"--{name}", type=typ, default=None)


def _model_from(args):
    params = {name: getattr(args, name) for name, _ in _MODEL_PARAMS
              if getattr(args, name) is not None}
    return builtin(args.model, **params), {"name": args.model, **params}


def _rule(s: str):
    try:
        return int(s)
    except ValueError:
        pass
    if montecarlo.is_exponent_rule(s):
        return s
    raise argparse.ArgumentTypeError(f"expected an integer or 'n^a', got {s!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="evchar", description="Extreme-value spacing statistics.")
    p.add_argument("--version", action="version", version=f"evchar {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="draw a sample from a builtin model")
    _add_model(s)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--header", action="store_true", help="write an 'x' header line")

    e = sub.add_parser("estimate", help="evaluate the statistic family on a sample file")
    e.add_argument("--input", required=True)
    e.add_argument("--k", type=_rule, required=True)
    e.add_argument("--ell", type=_rule, required=True)
    e.add_argument("--nu", type=float, default=0.0)
    e.add_argument("--y0", type=float, default=None)
    e.add_argument("--weight", choices=("outer", "inner"), default="outer")
    e.add_argument("--out", default=None)

    v = sub.add_parser("verify", help="run a Monte Carlo check of a limit theorem")
    v.add_argument("--theorem", required=True, choices=montecarlo.TARGETS)
    _add_model(v)
    v.add_argument("--n", type=int, required=True)
    v.add_argument("--k", type=_rule, required=True)
    v.add_argument("--ell", type=_rule, required=True)
    v.add_argument("--reps", type=int, required=True)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--nu", type=float, default=0.0)
    v.add_argument("--ell-fixed", dest="ell_fixed", action="store_true", default=None)
    v.add_argument("--ell-growing", dest="ell_fixed", action="store_false")
    v.add_argument("--weight", choices=("outer", "inner"), default="inner")
    v.add_argument("--tol-var", type=float, default=montecarlo.DEFAULT_TOLERANCES["var"])
    v.add_argument("--tol-mean", type=float, default=montecarlo.DEFAULT_TOLERANCES["mean"])
    v.add_argument("--tol-ks", type=float, default=montecarlo.DEFAULT_TOLERANCES["ks"])
    v.add_argument("--out", default=None)

    b = sub.add_parser("bridge-oracle", help="exact bridge covariances and discrepancy report")
    _add_model(b)
    b.add_argument("--n", type=int, required=True)
    b.add_argument("--k", type=_rule, required=True)
    b.add_argument("--ell", type=_rule, required=True)
    b.add_argument("--draws", type=int, default=10000)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default=None)

    d = sub.add_parser("detect", help="label the domain of attraction of a sample")
    d.add_argument("--input", required=True)
    d.add_argument("--alpha", type=float, default=0.7)
    d.add_argument("--beta", type=float, default=0.55)
    d.add_argument("--delta", type=float, default=0.25)
    d.add_argument("--z", type=float, default=2.5)
    d.add_argument("--out", default=None)
    return p


def parse_invocation(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    return build_parser().parse_args(argv)


def _config(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "command"}


# ---------------------------------------------------------------------------
# commands


def _cmd_simulate(args, manifest: RunManifest) -> int:
    model, _ = _model_from(args)
    batch = draw(model, args.n, args.seed)
    manifest.outputs.append(args.out)
    manifest.finished = _now()
    write_sample(args.out, batch.x_sorted, args.header, manifest)
    return EXIT_OK


def _cmd_estimate(args, manifest: RunManifest) -> int:
    batch = read_sample(args.input)
    k = montecarlo.resolve_rule(args.k, batch.n)
    ell = montecarlo.resolve_rule(args.ell, batch.n)
    window = WindowConfig(k, ell, args.nu, args.y0)
    sv = stat_vector(batch, window, weight=args.weight)
    # flat StatVector keys; the manifest is the only extra key
    _emit(sv.as_dict(), args.out, manifest)
    return EXIT_OK


def _table(report: montecarlo.McReport, verdicts) -> str:
    lines = [f"{'statistic':<14}{'mean':>12}{'var':>12}{'theo var':>12}{'KS':>10}"]
    for s in report.stats.values():
        tv = "-" if s.theo_var is None else f"{s.theo_var:.4g}"
        lines.append(f"{s.name:<14}{s.mean:>12.4g}{s.var:>12.4g}{tv:>12}{s.ks:>10.4g}")
    for v in verdicts:
        lines.append(f"  {v.stat}:{v.check} {'PASS' if v.passed else 'FAIL'} "
                     f"value={v.value:.4g} bound={v.bound:.4g}")
    return "\n".join(lines)


def _cmd_verify(args, manifest: RunManifest) -> int:
    model, _ = _model_from(args)
    cfg = montecarlo.ExperimentConfig(model=model, n=args.n, k_rule=args.k, ell_rule=args.ell,
                                      target=args.theorem, reps=args.reps, seed=args.seed,
                                      nu=args.nu, ell_fixed=args.ell_fixed, weight=args.weight)
    report = montecarlo.run(cfg)
    verdicts = montecarlo.compare(report, {"var": args.tol_var, "mean": args.tol_mean,
                                           "ks": args.tol_ks})
    ok = montecarlo.all_passed(verdicts)
    doc = {"report": report.results(), "wall_clock": report.wall_clock,
           "verdicts": [v.__dict__ for v in verdicts], "passed": ok}
    _emit(doc, args.out, manifest)
    sys.stderr.write(_table(report, verdicts) + "\n")
    return EXIT_OK if ok else EXIT_FAIL


def _cmd_bridge(args, manifest: RunManifest) -> int:
    model, _ = _model_from(args)
    k = montecarlo.resolve_rule(args.k, args.n)
    ell = montecarlo.resolve_rule(args.ell, args.n)
    exact = bridge.exact_cov(model, args.n, k, ell)
    kernel = bridge.exact_cov_kernel(model, args.n, k, ell)
    samples = bridge.functional_batch(model, args.n, k, ell, args.draws, args.seed)
    emp, se = bridge.empirical_cov(samples[:, :3])
    z = np.abs(emp - exact.entries) / se
    gamma = model.regime_gamma
    limit = bridge.exact_cov(model, args.n, k, 0).entries
    g = gamma
    c03_candidates = {"3(g+1)/(g+3)": 3.0 if g == math.inf else 3 * (g + 1) / (g + 3),
                      "3(g+1)(g+3)^-3": math.nan if g == math.inf else 3 * (g + 1) / (g + 3) ** 3}
    winner = min(c03_candidates, key=lambda k_: abs(c03_candidates[k_] - limit[0, 1])
                 if math.isfinite(c03_candidates[k_]) else math.inf)
    base = asy.BaseCov.from_matrix(limit)
    discrepancies = []
    try:
        for name in asy.MATRIX_NAMES:
            discrepancies.extend(asy.matrix_discrepancies(name, gamma, base))
        sigma_d = asy.sigma_discrepancies(gamma)
    except ValueError as exc:  # gamma = 2 boundary
        sigma_d = [{"error": str(exc)}]
    ok = bool(np.all(z <= 3.0))
    doc = {"window": {"n": args.n, "k": k, "ell": ell, "draws": args.draws},
           "exact_cov": exact.entries, "kernel_cov": kernel.entries,
           "endpoint_limit_cov": limit,
           "empirical_cov": emp, "empirical_se": se, "z_scores": z,
           "empirical_within_3se": ok,
           "var_n0_closed_form": asy.base_cov_limit(gamma).v0,
           "cov_n0_n3": {"oracle": limit[0, 1], "candidates": c03_candidates,
                         "winner": winner},
           "matrix_discrepancies": discrepancies, "sigma_discrepancies": sigma_d,
           "e_ell_findings": asy.e_ell_findings()}
    _emit(doc, args.out, manifest)
    return EXIT_OK if ok else EXIT_FAIL


def _cmd_detect(args, manifest: RunManifest) -> int:
    batch = read_sample(args.input)
    res = detect(batch, args.alpha, args.beta, args.delta, z=args.z)
    _emit({"detection": res.as_dict()}, args.out, manifest)
    return EXIT_OK


def execute(args: argparse.Namespace) -> int:
    manifest = RunManifest(command=args.command, config=_config(args),
                           seed=getattr(args, "seed", None))
    handlers = {"simulate": _cmd_simulate, "estimate": _cmd_estimate, "verify": _cmd_verify,
                "bridge-oracle": _cmd_bridge, "detect": _cmd_detect}
    return handlers[args.command](args, manifest)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = parse_invocation(argv)
        return execute(args)
    except (UsageError, DataError, WindowError, ModelError, montecarlo.ExperimentError,
            ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
