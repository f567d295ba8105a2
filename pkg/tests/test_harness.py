import json
import math

import numpy as np
import pytest
from click.testing import CliRunner

from qcomp import harness
from qcomp.cli import main
from qcomp.harness import (EmptySelection, ExperimentSpec, TrialRecord, compute_cdf,
                           power_vs_target_curve, records_to_csv, run_experiment)
from qcomp.scenario import ConfigError, NetworkConfig

SMALL = NetworkConfig(n_cells=2, n_users_per_cell=2, n_bs_antennas=8)


def _rec(values, method="QiCoMP", bits=3, target=0.0, status="optimal", drop=0, p=1.0):
    return TrialRecord(drop, method, bits, target, status, p, p, tuple(values), tuple(values), 1)


def test_spec_validation():
    with pytest.raises(ConfigError):
        ExperimentSpec(n_drops=0)
    with pytest.raises(ConfigError):
        ExperimentSpec(targets_db=())
    with pytest.raises(ConfigError):
        ExperimentSpec(bits=())
    with pytest.raises(ConfigError):
        ExperimentSpec(methods=("Other",))
    with pytest.raises(ConfigError):
        ExperimentSpec.from_dict({"drops": 3})


def test_spec_from_dict_round_trip():
    spec = ExperimentSpec.from_dict({"scenario": {"n_cells": 7}, "bits": [2, "inf"],
                                     "targets_db": 3, "n_drops": 2})
    assert spec.bits == (2, math.inf) and spec.targets_db == (3.0,)
    assert ExperimentSpec.from_dict(spec.to_dict()) == spec


def test_single_drop_cardinality():
    spec = ExperimentSpec(scenario=NetworkConfig(n_cells=1, n_bs_antennas=4), n_drops=1)
    assert len(run_experiment(spec)) == len(spec.methods)


def test_record_count_and_order():
    spec = ExperimentSpec(scenario=SMALL, bits=(2, "inf"), targets_db=(0, 3), n_drops=2)
    recs = run_experiment(spec)
    assert len(recs) == 2 * 2 * 2 * 2
    assert [(r.drop, r.method) for r in recs[:2]] == [(0, "QiCoMP"), (0, "QPercell")]


def test_byte_identical_csv_serial_and_parallel():
    spec = ExperimentSpec(scenario=SMALL, bits=(3,), targets_db=(0, 5), n_drops=3)
    a = records_to_csv(run_experiment(spec))
    assert a == records_to_csv(run_experiment(spec))
    assert a == records_to_csv(run_experiment(spec, workers=3))


def test_seed_changes_output():
    spec = ExperimentSpec(scenario=SMALL, n_drops=1)
    assert (records_to_csv(run_experiment(spec))
            != records_to_csv(run_experiment(spec.replace(master_seed=1))))


def test_failed_trials_are_recorded():
    spec = ExperimentSpec(scenario=SMALL, bits=(1,), targets_db=(20.0,), n_drops=2)
    recs = run_experiment(spec)
    assert len(recs) == 4
    assert all(not r.converged for r in recs)


def test_csv_round_trip(tmp_path):
    spec = ExperimentSpec(scenario=SMALL, bits=(2, "inf"), targets_db=(0,), n_drops=2)
    recs = run_experiment(spec)
    path = tmp_path / "r.csv"
    harness.write_records(recs, path)
    back = harness.read_records(path)
    assert records_to_csv(back) == records_to_csv(recs)
    text = path.read_text(encoding="utf-8")
    assert text.splitlines()[0].startswith("schema_version,")


def test_cdf_identical_values():
    x, f = compute_cdf([_rec([1.5, 1.5, 1.5])], "dl_sinr_db")
    np.testing.assert_array_equal(x, [1.5])
    np.testing.assert_array_equal(f, [1.0])


def test_cdf_two_values():
    x, f = compute_cdf([_rec([2.0, 1.0]), _rec([1.0, 2.0])], "dl_sinr_db")
    np.testing.assert_array_equal(x, [1.0, 2.0])
    np.testing.assert_array_equal(f, [0.5, 1.0])


def test_cdf_empty():
    with pytest.raises(EmptySelection):
        compute_cdf([], "dl_sinr_db")
    with pytest.raises(EmptySelection):
        compute_cdf([_rec([1.0], status="infeasible")], converged_only=True)


def test_cdf_monotone_and_bounded():
    rng = np.random.default_rng(0)
    x, f = compute_cdf([_rec(rng.normal(size=17)) for _ in range(5)])
    assert np.all(np.diff(x) > 0) and np.all(np.diff(f) > 0)
    assert 0 < f[0] and f[-1] == 1.0


def test_qicomp_median_at_target():
    spec = ExperimentSpec(scenario=SMALL, n_drops=5, methods=("QiCoMP",))
    x, f = compute_cdf(run_experiment(spec))
    assert abs(x[np.searchsorted(f, 0.5)]) < 0.01


def test_power_curve():
    recs = [_rec([0], target=0, p=1.0), _rec([0], target=0, p=3.0, drop=1),
            _rec([0], target=5, p=10.0), _rec([0], target=5, status="infeasible", drop=1)]
    curve = power_vs_target_curve(recs)[(3, "QiCoMP")]
    assert [p.target_db for p in curve] == [0, 5]
    assert curve[0].mean_power_dbm == pytest.approx(10 * math.log10(2.0))
    assert not curve[0].diverged
    assert curve[1].diverged and curve[1].n_converged == 1
    assert harness.divergence_onset(curve) == 5


def test_ideal_curve_increasing():
    spec = ExperimentSpec(scenario=SMALL, bits=("inf",), targets_db=(0, 4, 8), n_drops=3,
                          methods=("QiCoMP",))
    pts = power_vs_target_curve(run_experiment(spec))[(math.inf, "QiCoMP")]
    assert all(b.mean_power_dbm > a.mean_power_dbm for a, b in zip(pts, pts[1:]))


def test_presets_valid():
    assert harness.PRESETS["desk"].scenario.n_bs_antennas == 16
    assert harness.PRESETS["desk"].n_drops == 100
    assert harness.PRESETS["dense-128"].scenario.n_bs_antennas == 128


# CLI -----------------------------------------------------------------------

def test_cli_oracle():
    res = CliRunner().invoke(main, ["oracle", "--max-bits", "3"])
    assert res.exit_code == 0
    assert "0.3633802276" in res.output


def test_cli_run_cdf_curve(tmp_path):
    spec = tmp_path / "e.yaml"
    spec.write_text("name: t\nscenario: {n_cells: 2, n_bs_antennas: 4}\n"
                    "bits: [3, inf]\ntargets_db: [0, 3]\nn_drops: 2\n")
    runner = CliRunner()
    res = runner.invoke(main, ["run", str(spec), "--out", str(tmp_path / "o"), "--seed", "4",
                               "--workers", "2"])
    assert res.exit_code == 0, res.output
    csv_path = tmp_path / "o" / "t.csv"
    meta = json.loads((tmp_path / "o" / "t.json").read_text())
    assert meta["n_records"] == 16 and meta["spec"]["master_seed"] == 4
    res = runner.invoke(main, ["cdf", str(csv_path), "--method", "QiCoMP", "--bits", "3"])
    assert res.exit_code == 0 and res.output.splitlines()[-1].endswith(",1.0")
    res = runner.invoke(main, ["curve", str(csv_path)])
    assert res.exit_code == 0 and len(res.output.splitlines()) == 1 + 8


@pytest.mark.parametrize("text", ["n_drops: 0\n", "bits: [0]\n", "scenario: {n_cells: 4}\n",
                                  "unknown: 1\n", "[1, 2]\n", "a: [\n"])
def test_cli_validation_errors(tmp_path, text):
    spec = tmp_path / "bad.yaml"
    spec.write_text(text)
    res = CliRunner().invoke(main, ["run", str(spec), "--out", str(tmp_path)])
    assert res.exit_code != 0
    assert "error" in res.output


def test_cli_missing_inputs(tmp_path):
    runner = CliRunner()
    assert runner.invoke(main, ["run"]).exit_code != 0
    assert runner.invoke(main, ["run", str(tmp_path / "none.yaml")]).exit_code != 0
    assert runner.invoke(main, ["cdf", str(tmp_path / "none.csv")]).exit_code != 0
