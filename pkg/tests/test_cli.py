import json
import math
from pathlib import Path

import numpy as np
import pytest

from evchar import __version__
from evchar.cli import dumps, main, parse_invocation, read_sample, DataError, UsageError
from evchar.detect import detect
from evchar.estimators import WindowConfig, stat_vector
from evchar.models import builtin, draw

GOLDEN = Path(__file__).parent / "golden"


def schema(obj):
    """Key tree of a JSON document with leaves replaced by their kind."""
    if isinstance(obj, dict):
        return {k: schema(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [schema(obj[0])] if obj and isinstance(obj[0], (dict, list)) else "list"
    return "number" if isinstance(obj, (int, float)) and not isinstance(obj, bool) else type(obj).__name__


def _run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def sample(tmp_path):
    path = tmp_path / "s.csv"
    assert main(["simulate", "--model", "pareto", "--gamma", "2", "--n", "1000",
                 "--seed", "7", "--out", str(path), "--header"]) == 0
    return path


# -- parsing ------------------------------------------------------------------------------

def test_parse_examples():
    a = parse_invocation("simulate --model pareto --gamma 2 --n 1000 --seed 7 --out s.csv".split())
    assert (a.command, a.model, a.gamma, a.n, a.seed, a.out) == ("simulate", "pareto", 2.0,
                                                                 1000, 7, "s.csv")
    a = parse_invocation("estimate --input s.csv --k 100 --ell 5 --nu 0.3".split())
    assert (a.command, a.k, a.ell, a.nu) == ("estimate", 100, 5, 0.3)
    a = parse_invocation(["verify", "--theorem", "T3.2", "--model", "pareto", "--n", "100",
                          "--k", "n^0.6", "--ell", "1", "--reps", "10"])
    assert a.k == "n^0.6" and a.ell == 1


@pytest.mark.parametrize("argv", [
    "simulate --model pareto --n 10 --seed 1 --out x --bogus 3",
    "simulate --model nosuch --n 10 --seed 1 --out x",
    "simulate --model pareto --n ten --seed 1 --out x",
    "simulate --model pareto --seed 1 --out x",
    "estimate --input s.csv --k k^2 --ell 1",
    "verify --theorem T9.9 --model pareto --n 10 --k 5 --ell 1 --reps 5",
])
def test_usage_errors(argv):
    with pytest.raises(UsageError):
        parse_invocation(argv.split())
    assert main(argv.split()) == 1


def test_window_error_exit(sample, capsys):
    code, _, err = _run(["estimate", "--input", sample, "--k", 5, "--ell", 9], capsys)
    assert code == 1 and "ell < k" in err


def test_alpha_beta_order_exit(sample, capsys):
    code, _, err = _run(["detect", "--input", sample, "--alpha", 0.5, "--beta", 0.6], capsys)
    assert code == 1 and "error" in err


# -- sample files --------------------------------------------------------------------------

def test_sample_file_format(sample):
    lines = sample.read_text().splitlines()
    assert lines[0].startswith("# manifest ")
    man = json.loads(lines[0][len("# manifest "):])
    assert man["seed"] == 7 and man["version"] == __version__
    assert man["config"]["model"] == "pareto" and man["outputs"] == [str(sample)]
    assert lines[1] == "x" and len(lines) == 1002


def test_sample_values_round_trip(sample):
    want = draw(builtin("pareto", gamma=2.0), 1000, 7).x_sorted
    np.testing.assert_array_equal(read_sample(str(sample)).x_sorted, want)


def test_value_below_one(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text("x\n1.5\n0.5\n2.0\n")
    code, _, err = _run(["estimate", "--input", p, "--k", 2, "--ell", 1], capsys)
    assert code == 1
    assert "bad.csv:3" in err and "X >= 1" in err


@pytest.mark.parametrize("body,needle", [("1.5\nabc\n2\n", "not a number"),
                                         ("1.5\nnan\n2\n", "non-finite"),
                                         ("1.5\n", "at least two")])
def test_bad_inputs(tmp_path, body, needle):
    p = tmp_path / "b.csv"
    p.write_text(body)
    with pytest.raises(DataError, match=needle):
        read_sample(str(p))


def test_unreadable_input(tmp_path, capsys):
    code, _, err = _run(["detect", "--input", tmp_path / "missing.csv"], capsys)
    assert code == 1 and "cannot read" in err


def test_comments_skipped(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("# note\n\n3.0  # inline\n1.0\n2.0,\n")
    assert read_sample(str(p)).x_sorted.tolist() == [1.0, 2.0, 3.0]


# -- estimate -------------------------------------------------------------------------------

def test_simulate_estimate_bit_for_bit(sample, capsys):
    code, out, _ = _run(["estimate", "--input", sample, "--k", 100, "--ell", 5, "--nu", 0.3],
                        capsys)
    assert code == 0
    doc = json.loads(out)
    sv = stat_vector(draw(builtin("pareto", gamma=2.0), 1000, 7), WindowConfig(100, 5, 0.3))
    want = sv.as_dict()
    assert set(doc) == set(want) | {"manifest"}
    for key, v in want.items():
        got = doc[key]
        if v is None or (isinstance(v, float) and not math.isfinite(v)):
            assert got is None
        else:
            assert float(got).hex() == float(v).hex(), key


def test_estimate_exponent_rule_and_out_file(sample, tmp_path):
    out = tmp_path / "e.json"
    assert main(["estimate", "--input", str(sample), "--k", "n^0.6", "--ell", "n^0.3",
                 "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert (doc["k"], doc["ell"]) == (63, 7)
    assert doc["manifest"]["outputs"] == [str(out)]
    assert doc["manifest"]["config"]["k"] == "n^0.6"


# -- JSON ------------------------------------------------------------------------------------

def test_dumps_round_trip_17_digits():
    vals = [0.1, 1 / 3, math.pi * 1e-300, 2.0 ** 0.5 * 1e300, -0.0, 5e-324]
    back = json.loads(dumps({"v": vals}))["v"]
    assert [float(x).hex() for x in back] == [v.hex() for v in vals]


def test_dumps_non_finite_and_numpy():
    doc = json.loads(dumps({"a": math.nan, "b": math.inf, "c": np.float64(1.5),
                            "d": np.arange(3), "e": np.bool_(True), "f": None}))
    assert doc == {"a": None, "b": None, "c": 1.5, "d": [0, 1, 2], "e": True, "f": None}


# -- golden schemas --------------------------------------------------------------------------

def _golden(name, doc):
    path = GOLDEN / f"{name}.json"
    assert schema(doc) == json.loads(path.read_text()), f"schema of {name} changed"


def test_estimate_schema(sample, capsys):
    _, out, _ = _run(["estimate", "--input", sample, "--k", 100, "--ell", 5, "--nu", 0.3,
                      "--y0", 20.0], capsys)
    _golden("estimate", json.loads(out))


def test_detect_output(sample, capsys):
    code, out, _ = _run(["detect", "--input", sample], capsys)
    assert code == 0
    doc = json.loads(out)
    _golden("detect", doc)
    want = detect(read_sample(str(sample)), weight="inner")
    assert doc["detection"]["domain_label"] == want.domain_label.value
    assert doc["detection"]["d_hat"] == want.d_hat


VERIFY = ["verify", "--theorem", "T3.2", "--model", "pareto", "--gamma", "1", "--n", "100000",
          "--k", "n^0.6", "--ell", "1", "--reps", "500", "--seed", "0"]


def test_verify_pass_exit_zero(tmp_path, capsys):
    out = tmp_path / "v.json"
    code, _, err = _run(VERIFY + ["--out", out], capsys)
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["passed"] is True
    assert "T2_fixed:var_ratio PASS" in err and "statistic" in err
    _golden("verify", doc)


def test_verify_failure_exit_two(capsys):
    # the same run with a variance band no sample variance can meet
    code, out, err = _run(VERIFY[:-4] + ["--reps", "50", "--tol-var", "1e-9"], capsys)
    assert code == 2
    assert json.loads(out)["passed"] is False and "FAIL" in err


def test_bridge_oracle_output(capsys):
    code, out, _ = _run(["bridge-oracle", "--model", "weibull", "--gamma", "1", "--n", 10**6,
                         "--k", 1000, "--ell", 10, "--draws", 2000, "--seed", 1], capsys)
    doc = json.loads(out)
    _golden("bridge_oracle", doc)
    assert code == (0 if doc["empirical_within_3se"] else 2)
    assert doc["cov_n0_n3"]["winner"] == "3(g+1)/(g+3)"
    kinds = {d["kind"] for d in doc["matrix_discrepancies"]}
    assert kinds <= {"asymmetric", "missing", "mismatch"}
    assert any(f["x"] == 0 and f["printed_cdf"] == 1 and not f["valid"]
               for f in doc["e_ell_findings"])


def test_manifest_reproduces_output(sample, capsys):
    _, out1, _ = _run(["estimate", "--input", sample, "--k", 100, "--ell", 5], capsys)
    man = json.loads(out1)["manifest"]
    argv = [man["command"]]
    for key, v in man["config"].items():
        if v is not None:
            argv += [f"--{key.replace('_', '-')}", v]
    _, out2, _ = _run(argv, capsys)
    strip = lambda d: {k: v for k, v in json.loads(d).items() if k != "manifest"}
    assert strip(out1) == strip(out2)
