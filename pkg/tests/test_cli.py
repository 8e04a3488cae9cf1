import json
import math
import subprocess
import sys

import pytest

from brownout_sim.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from brownout_sim.domain import Policy
from brownout_sim.experiment import (
    ConfigError,
    dispatch,
    execute,
    parse_spec,
    read_ledger_csv,
    write_artifacts,
)
from brownout_sim.workload import load_trace_dir, synth_traces


def write_config(tmp_path, **over):
    cfg = {
        "policies": ["PCO"],
        "seeds": [0, 1],
        "sim": {"horizon_intervals": 24, "overload_threshold": 0.85},
        "datacenter": {"n_hosts": 5, "n_vms": 10},
        "output": str(tmp_path / "out"),
    }
    cfg.update(over)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def summary(tmp_path, name="out"):
    return json.loads((tmp_path / name / "summary.json").read_text())


class TestParseSpec:
    def test_defaults(self):
        spec = parse_spec({})
        assert spec.policies == (Policy.PCO,) and spec.seeds == (0,)
        assert spec.base.lam == 100 and spec.n_hosts == 50 and spec.n_vms == 100

    def test_repeats_become_seeds(self):
        assert parse_spec({"repeats": 3}).seeds == (0, 1, 2)

    def test_lambda_alias_and_overrides(self):
        spec = parse_spec({"sim": {"lambda": 5}}, {"threshold": 0.9, "seeds": [4]})
        assert spec.base.lam == 5 and spec.base.overload_threshold == 0.9 and spec.seeds == (4,)

    def test_paper_faithful(self):
        spec = parse_spec({"paper_faithful": True})
        assert not spec.base.ubp_corrected and not spec.base.weighted_utilization

    @pytest.mark.parametrize(
        "raw,field",
        [
            ({"bogus": 1}, "bogus"),
            ({"policies": ["XYZ"]}, "policies"),
            ({"sim": {"overload_threshold": 2}}, "sim"),
            ({"sim": {"nope": 1}}, "sim"),
            ({"seeds": ["a"]}, "seeds"),
            ({"repeats": 0}, "repeats"),
            ({"sweep": {"axis": "lambda", "values": []}}, "sweep"),
            ({"sweep": {"axis": "speed", "values": [1]}}, "sweep"),
            ({"components": {"sigma_u": 0.5}}, "components"),
            ({"traces": {"dir": "x", "synthetic": {}}}, "traces"),
        ],
    )
    def test_errors_name_field(self, raw, field):
        with pytest.raises(ConfigError, match=field):
            parse_spec(raw)

    def test_round_trips_through_dict(self):
        spec = parse_spec({"policies": ["BMDP"], "seeds": [3], "sweep": {"axis": "lambda", "values": [0, 10]}})
        assert parse_spec(spec.to_dict()) == spec


class TestRun:
    def test_pco_day(self, tmp_path):
        path = write_config(tmp_path, sim={"horizon_intervals": 288})
        assert main(["run", str(path)]) == EXIT_OK
        s = summary(tmp_path)
        runs = s["results"][0]["runs"]
        assert all(r["energy_kwh"] > 0 and r["discount"] == 0 for r in runs)
        assert s["seeds"] == [0, 1]
        assert s["config"]["sim"]["horizon_intervals"] == 288

    def test_csv_round_trip(self, tmp_path):
        path = write_config(tmp_path, policies=["BMDP"])
        assert main(["run", str(path)]) == EXIT_OK
        s = summary(tmp_path)
        for r in s["results"][0]["runs"]:
            rows = read_ledger_csv(tmp_path / "out" / r["file"])
            assert list(rows[0]) == ["t", "energy_kwh", "discount", "g", "overloaded", "migrations", "hosts_on"]
            assert math.fsum(x["energy_kwh"] for x in rows) == r["energy_kwh"]
            assert math.fsum(x["g"] for x in rows) == r["g"]
            assert sum(x["migrations"] for x in rows) == r["migrations"]
        spec = parse_spec(s["config"])
        res = execute(spec, spec.runs()[0])
        rows = read_ledger_csv(tmp_path / "out" / "BMDP_seed0.csv")
        assert [x["energy_kwh"] for x in rows] == [rec.energy_kwh for rec in res.ledger.records]

    def test_rerun_is_byte_identical(self, tmp_path):
        path = write_config(tmp_path, policies=["UBP", "HUPRFCS"])
        assert main(["run", str(path)]) == EXIT_OK
        first = {p.name: p.read_bytes() for p in (tmp_path / "out").iterdir()}
        assert main(["run", str(path)]) == EXIT_OK
        assert first == {p.name: p.read_bytes() for p in (tmp_path / "out").iterdir()}

    def test_workers_do_not_change_results(self, tmp_path):
        spec = parse_spec({"policies": ["UBP", "BMDP"], "seeds": [0, 1], "sim": {"horizon_intervals": 12}, "datacenter": {"n_hosts": 4, "n_vms": 8}})
        serial = dispatch(spec, workers=1)
        parallel = dispatch(spec, workers=2)
        assert [r.ledger.records for r in serial] == [r.ledger.records for r in parallel]

    def test_missing_trace_dir(self, tmp_path, capsys):
        path = write_config(tmp_path, traces={"dir": str(tmp_path / "absent")})
        assert main(["run", str(path)]) == EXIT_RUNTIME
        assert "absent" in capsys.readouterr().err

    def test_bad_json(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text("{nope")
        assert main(["run", str(path)]) == EXIT_CONFIG
        assert "line 1" in capsys.readouterr().err

    def test_run_refuses_sweep_config(self, tmp_path):
        path = write_config(tmp_path, sweep={"axis": "lambda", "values": [0]})
        assert main(["run", str(path)]) == EXIT_CONFIG

    def test_trace_dir_source(self, tmp_path):
        traces = synth_traces(10, 48, seed=7)
        from brownout_sim.workload import write_trace_dir

        write_trace_dir(traces, tmp_path / "tr")
        path = write_config(tmp_path, traces={"dir": str(tmp_path / "tr")}, sim={"horizon_intervals": 24})
        assert main(["run", str(path)]) == EXIT_OK
        runs = summary(tmp_path)["results"][0]["runs"]
        # seeds 0 and 1 replay the first and second day of the corpus
        assert runs[0]["energy_kwh"] != runs[1]["energy_kwh"]
        assert summary(tmp_path)["repeats_note"] is None

    def test_module_entry_point(self, tmp_path):
        out = subprocess.run([sys.executable, "-m", "brownout_sim", "--help"], capture_output=True, text=True)
        assert out.returncode == 0 and "gen-traces" in out.stdout


class TestSweep:
    def run_sweep(self, tmp_path, policies, axis, values, seeds=(0, 1, 2), **extra):
        path = write_config(tmp_path, policies=policies, seeds=list(seeds), sweep={"axis": axis, "values": values}, **extra)
        assert main(["sweep", str(path)]) == EXIT_OK
        return summary(tmp_path)

    def means(self, s, metric):
        return [e["stats"][metric]["mean"] for e in s["results"]]

    def test_lambda_axis(self, tmp_path):
        s = self.run_sweep(tmp_path, ["BMDP"], "lambda", [0, 100, 4500], sim={"horizon_intervals": 48})
        d = self.means(s, "discount_pct")
        assert d[0] >= d[1] >= d[2] and d[0] > d[2]
        lines = (tmp_path / "out" / "sweep.csv").read_text().splitlines()
        assert lines[0].startswith("lambda,policy,energy_kwh_mean")
        assert len(lines) == 4

    def test_threshold_axis(self, tmp_path):
        s = self.run_sweep(tmp_path, ["PCO"], "threshold", [0.8, 0.95], sim={"horizon_intervals": 48})
        e = self.means(s, "energy_kwh")
        assert e[1] < e[0]

    def test_optional_fraction_axis(self, tmp_path):
        s = self.run_sweep(tmp_path, ["PCO"], "optional_fraction", [0.25, 0.5, 1.0])
        e = self.means(s, "energy_kwh")
        assert e[0] == e[1] == e[2]

    def test_sweep_needs_axis(self, tmp_path):
        assert main(["sweep", str(write_config(tmp_path))]) == EXIT_CONFIG


class TestCompare:
    def test_self_comparison(self, tmp_path, capsys):
        path = write_config(tmp_path)
        main(["run", str(path)])
        sp = str(tmp_path / "out" / "summary.json")
        capsys.readouterr()
        assert main(["compare", sp, sp, "--out", str(tmp_path / "cmp.csv")]) == EXIT_OK
        rows = (tmp_path / "cmp.csv").read_text().splitlines()
        assert rows[0] == "name_a,name_b,n,mean_a,mean_b,diff,ci_lo,ci_hi,t_stat,p_value"
        fields = dict(zip(rows[0].split(","), rows[1].split(",")))
        assert float(fields["diff"]) == 0 and float(fields["p_value"]) == 1
        assert "paired t-tests" in capsys.readouterr().out

    def test_policy_pairs(self, tmp_path, capsys):
        path = write_config(tmp_path, policies=["HUPRFCS", "BMDP"], seeds=list(range(4)))
        main(["run", str(path)])
        capsys.readouterr()
        assert main(["compare", str(tmp_path / "out" / "summary.json"), "--metric", "discount"]) == EXIT_OK
        out = capsys.readouterr().out
        header, row = out.splitlines()[:2]
        assert header.split(",")[:2] == ["name_a", "name_b"]
        assert row.startswith("HUPRFCS,BMDP,4,")
        assert "95% CI" in out

    def test_single_repeat_is_an_error(self, tmp_path):
        path = write_config(tmp_path, policies=["PCO", "UBP"], seeds=[0])
        main(["run", str(path)])
        assert main(["compare", str(tmp_path / "out" / "summary.json")]) == EXIT_CONFIG


class TestGenTraces:
    def test_counts_and_round_trip(self, tmp_path):
        assert main(["gen-traces", str(tmp_path / "t"), "--n-vms", "10", "--seed", "4"]) == EXIT_OK
        files = sorted((tmp_path / "t").iterdir())
        assert len(files) == 10 and all(len(f.read_text().splitlines()) == 288 for f in files)
        assert load_trace_dir(tmp_path / "t") == synth_traces(10, 288, seed=4)

    def test_always_spiking(self, tmp_path):
        main(["gen-traces", str(tmp_path / "t"), "--n-vms", "2", "--horizon", "5", "--spike-prob", "1", "--spike-level", "0.9"])
        for f in (tmp_path / "t").iterdir():
            assert f.read_text().splitlines() == ["90"] * 5

    def test_invalid_level(self, tmp_path):
        assert main(["gen-traces", str(tmp_path / "t"), "--base-level", "3"]) == EXIT_CONFIG


def test_write_artifacts_layout(tmp_path):
    spec = parse_spec({"policies": ["PCO"], "seeds": [0], "sim": {"horizon_intervals": 4}, "datacenter": {"n_hosts": 2, "n_vms": 2}})
    paths = write_artifacts(spec, dispatch(spec), tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["PCO_seed0.csv", "summary.json"]
    assert paths["summary"].exists()
    st = json.loads(paths["summary"].read_text())["results"][0]["stats"]["energy_kwh"]
    assert st["ci_lo"] is None  # one repeat has no interval
