import csv
import json

import numpy as np
import pytest
from click.testing import CliRunner

from steinthermo import ergodic as eg
from steinthermo import stein as st
from steinthermo.cli import ANCHORS, main


def _invoke(tmp_path, toml, *args):
    cfg = tmp_path / "run.toml"
    cfg.write_text(toml)
    out = tmp_path / "out"
    res = CliRunner().invoke(main, ["--config", str(cfg), "--out", str(out), *args])
    return res, out


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_counterexample_passthrough(tmp_path):
    res, out = _invoke(tmp_path, 'command = "counterexample"\n[counterexample]\nbeta = 1.0\n'
                                 'ns = [10, 20, 50]\n')
    assert res.exit_code == 0, res.output
    rows = _rows(out / "counterexample.csv")
    for got, ref in zip(rows, st.toy_counterexample(1.0, [10, 20, 50])):
        assert int(got["n"]) == ref.n
        assert float(got["kl_rate"]) == ref.kl
        assert float(got["d_zero_rate"]) == ref.d_zero
        assert float(got["d_zero_rate_upper"]) == ref.d_zero_upper
        assert float(got["d_max_rate"]) == ref.d_max


def test_property_suite_is_deterministic(tmp_path):
    toml = 'command = "property-suite"\nseed = 42\n[property-suite]\ncount = 4\n'
    for sub in "abc":
        (tmp_path / sub).mkdir()
    a, out_a = _invoke(tmp_path / "a", toml)
    b, out_b = _invoke(tmp_path / "b", toml)
    c, out_c = _invoke(tmp_path / "c", toml, "--jobs", "2")
    assert a.exit_code == b.exit_code == c.exit_code == 0
    text = (out_a / "property_suite.csv").read_bytes()
    assert text == (out_b / "property_suite.csv").read_bytes()
    assert text == (out_c / "property_suite.csv").read_bytes()


def test_ergodic_scan_matches_module(tmp_path):
    toml = ('command = "ergodic-scan"\n[ergodic-scan]\netas = [0.3, 0.7]\nns = [4, 8]\n'
            'nagaoka_grid = [0.0, 0.1]\n'
            '[ergodic-scan.source]\nkind = "markov"\ntransition = [[0.8, 0.2], [0.2, 0.8]]\n'
            '[ergodic-scan.reference]\nkind = "ising"\nbeta = 0.5\n')
    res, out = _invoke(tmp_path, toml)
    assert res.exit_code == 0, res.output
    src, ref = eg.markov([[0.8, 0.2], [0.2, 0.8]]), eg.ising(0.5)
    direct = sorted(eg.spectral_rate_scan(src, ref, [0.3, 0.7], [4, 8]), key=lambda r: (r.n, r.eta))
    rows = _rows(out / "ergodic_scan.csv")
    assert [float(r["value"]) for r in rows] == [r.value for r in direct]
    summary = json.loads((out / "ergodic_summary.json").read_text())
    assert summary["kl_rate"] == eg.kl_rate(src, ref)
    assert (out / "nagaoka.csv").exists()


def test_stein_scan_with_w_report(tmp_path):
    toml = ('command = "stein-scan"\n[stein-scan]\nbeta = 1.0\nhamiltonian = [0.0, 1.0]\n'
            'etas = [0.5]\nns = [2, 4]\n[stein-scan.rho]\neigenvalues = [0.9, 0.1]\nangle = 0.6283185307179586\n'
            '[stein-scan.w]\nn = 10\neps = 0.3\n')
    res, out = _invoke(tmp_path, toml)
    assert res.exit_code == 0, res.output
    report = json.loads((out / "typicality.json").read_text())
    assert all(report["condition_flags"].values())
    assert len(_rows(out / "stein_scan.csv")) == 2


def test_invariant_failure_exit_code(tmp_path):
    toml = ('command = "stein-scan"\n[stein-scan]\nbeta = 1.0\nhamiltonian = [0.0, 1.0]\n'
            'etas = [0.5]\nns = [2, 4]\ntolerance = 1e-6\n'
            '[stein-scan.rho]\neigenvalues = [0.9, 0.1]\nangle = 0.5\n')
    res, _ = _invoke(tmp_path, toml)
    assert res.exit_code == 1
    assert "invariant failed [stein.quantum-trend]" in res.output


def test_thermo_convert(tmp_path):
    toml = ('command = "thermo-convert"\n[thermo-convert]\nbeta = 1.0\nhamiltonian = [0.0, 0.5, 1.0]\n'
            'rho = [0.1, 0.1, 0.8]\ntarget = [0.5, 0.3, 0.2]\n')
    res, out = _invoke(tmp_path, toml)
    assert res.exit_code == 0, res.output
    data = json.loads((out / "thermo_convert.json").read_text())
    assert data["convertible_curve"] == data["convertible_lp"]


@pytest.mark.parametrize("toml", [
    "",
    'command = "nonsense"\n',
    'command = "stein-scan"\n[stein-scan]\nbeta = 1.0\n',
    'command = "property-suite"\n',
    'command = "property-suite"\nseed = -3\n',
    'command = "thermo-convert"\n[thermo-convert]\nbeta = 1.0\nhamiltonian = [0.0, 1.0]\n'
    'rho = [[0.5, 0.5], [0.5, 0.5]]\ntarget = [0.5, 0.5]\n',
    "this is = not [toml",
])
def test_configuration_errors_exit_2(tmp_path, toml):
    res, _ = _invoke(tmp_path, toml)
    assert res.exit_code == 2
    assert "error" in res.output


def test_positional_command_and_seed_override(tmp_path):
    res, out = _invoke(tmp_path, '[property-suite]\ncount = 2\n', "property-suite", "--seed", "7")
    assert res.exit_code == 0, res.output
    assert len(_rows(out / "property_suite.csv")) > 0


def test_divergence_audit(tmp_path):
    res, out = _invoke(tmp_path, 'command = "divergence-audit"\nseed = 1\n[divergence-audit]\n'
                                 'count = 3\ndims = [2, 4]\n')
    assert res.exit_code == 0, res.output
    assert all(r["passed"] == "1" for r in _rows(out / "divergence_audit.csv"))


def test_list_anchors():
    res = CliRunner().invoke(main, ["--list-anchors"])
    assert res.exit_code == 0
    assert [line.split("\t")[0] for line in res.output.splitlines()] == sorted(ANCHORS)


def test_matrix_json_literal(tmp_path):
    toml = ('command = "stein-scan"\n[stein-scan]\nbeta = 1.0\nhamiltonian = [0.0, 1.0]\n'
            'etas = [0.5]\nns = [2]\n'
            'rho = { dim = 2, re = [[0.7, 0.1], [0.1, 0.3]], im = [[0.0, 0.0], [0.0, 0.0]] }\n')
    res, out = _invoke(tmp_path, toml)
    assert res.exit_code == 0, res.output
    assert np.isfinite(float(_rows(out / "stein_scan.csv")[0]["rate"]))
