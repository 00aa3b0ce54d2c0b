"""Unit tests for scenario scripting, the closed-loop engine and the CLI."""

import json

import numpy as np
import pytest

from lstmpc import cli, harness, lstm, mpc, plant, sysid

from conftest import ASSETS


def tiny_physical_scenario(**kw):
    base = dict(duration_s=300.0, mode="physical",
                setpoints=[(0.0, 7.0)], disturbances=[])
    base.update(kw)
    return harness.Scenario(**base)


class TestScenarioIo:
    def test_json_round_trip(self, tmp_path):
        sc = harness.benchmark_scenario()
        path = tmp_path / "sc.json"
        sc.to_json(path)
        sc2 = harness.Scenario.from_json(path)
        assert sc2 == sc

    def test_rejects_unknown_fields(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"duration_s": 10.0, "warp_drive": True}))
        with pytest.raises(ValueError, match="warp_drive"):
            harness.Scenario.from_json(path)

    def test_shipped_benchmark_asset(self):
        sc = harness.Scenario.from_json(ASSETS / "benchmark_scenario.json")
        assert sc.duration_s == 10000.0
        assert sc.disturbances == [(7000.0, 0.45), (8000.0, 0.6), (9000.0, 0.7)]


class TestSetpointTrace:
    def test_ramp_rate_bound(self, bench_nrm):
        sc = harness.benchmark_scenario()
        y0s = harness.setpoint_trace(sc, bench_nrm, 1000)
        steps = np.abs(np.diff(y0s))
        assert np.max(steps) <= sc.ramp_rate + 1e-12

    def test_reaches_targets(self, bench_nrm):
        sc = harness.benchmark_scenario()
        y0s = harness.setpoint_trace(sc, bench_nrm, 1000)
        phys = bench_nrm.denormalize_y(y0s)
        assert phys[200] == pytest.approx(7.5, abs=1e-9)     # after first ramp
        assert phys[-1] == pytest.approx(7.0, abs=1e-9)

    def test_constant_profile_has_single_segment(self, bench_nrm):
        sc = tiny_physical_scenario(duration_s=9000.0)
        segs = harness.constant_segments(sc, bench_nrm, 900)
        assert len(segs) == 1
        assert segs[0][:2] == (0, 900)

    def test_profile_value_lookup(self):
        prof = [(0.0, 1.0), (100.0, 2.0)]
        assert harness._profile_value(prof, 50.0, 0.0) == 1.0
        assert harness._profile_value(prof, 100.0, 0.0) == 2.0
        assert harness._profile_value([], 5.0, 9.0) == 9.0


class TestRunScenario:
    def test_zero_duration(self, bench_w, bench_spec):
        sc = tiny_physical_scenario(duration_s=0.0)
        report = harness.run_scenario(sc, bench_w, spec=bench_spec)
        assert report.steps == 0
        assert report.constraint_violations == 0
        assert report.segment_errors == []

    def test_csv_byte_reproducibility(self, tmp_path, bench_w, bench_spec):
        sc = tiny_physical_scenario(duration_s=200.0)
        paths = []
        for tag in ("a", "b"):
            report = harness.run_scenario(sc, bench_w, spec=bench_spec)
            p = tmp_path / f"trace_{tag}.csv"
            report.save_csv(p)
            paths.append(p)
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_trace_schema(self, bench_w, bench_spec):
        sc = tiny_physical_scenario(duration_s=100.0)
        report = harness.run_scenario(sc, bench_w, spec=bench_spec)
        assert list(report.trace) == harness.TRACE_COLUMNS
        assert report.steps == 10
        assert all(len(v) == 10 for v in report.trace.values())

    def test_eo_trace_matches_affine_recursion(self, bench_w, bench_spec):
        sc = tiny_physical_scenario(duration_s=200.0)
        report = harness.run_scenario(sc, bench_w, spec=bench_spec)
        e = sc.e_o0
        for logged in report.trace["e_o"]:
            assert logged == pytest.approx(e, abs=1e-15)
            e = mpc.eo_step(e, bench_spec.rho_o, bench_spec.w_bar)

    def test_nominal_mode_estimate_and_tracking(self, bench_w, bench_spec):
        sc = harness.Scenario(duration_s=3000.0, mode="nominal",
                              setpoints=[(0.0, 7.2)], seed=2)
        report = harness.run_scenario(sc, bench_w, spec=bench_spec)
        assert report.constraint_violations == 0
        assert report.feasibility_losses == 0
        # true model state known: V_o is logged and must shrink to ~0
        v_o = report.trace["V_o"]
        assert v_o[-1] < 1e-3 * max(v_o[0], 1e-9)
        # asymptotic tracking of the constant set-point
        err = [abs(y - y0) for y, y0 in zip(report.trace["y_phys"],
                                            report.trace["y0_phys"])]
        assert max(err[-20:]) < 1e-3

    def test_nominal_mode_vo_bounded_by_eo(self, bench_w, bench_spec):
        sc = harness.Scenario(duration_s=2000.0, mode="nominal",
                              setpoints=[(0.0, 7.0)], seed=5, e_o0=0.5)
        report = harness.run_scenario(sc, bench_w, spec=bench_spec)
        for v, e in zip(report.trace["V_o"], report.trace["e_o"]):
            assert v <= e + 1e-9

    def test_rejects_unknown_mode(self, bench_w):
        sc = tiny_physical_scenario(mode="imaginary")
        with pytest.raises(ValueError):
            harness.run_scenario(sc, bench_w)

    def test_rejects_weights_without_ranges(self):
        from conftest import small_net
        sc = tiny_physical_scenario()
        with pytest.raises(ValueError):
            harness.run_scenario(sc, small_net())

    def test_report_round_trip(self, tmp_path, bench_w, bench_spec):
        sc = tiny_physical_scenario(duration_s=100.0)
        report = harness.run_scenario(sc, bench_w, spec=bench_spec)
        report.save_json(tmp_path / "report.json")
        doc = json.loads((tmp_path / "report.json").read_text())
        assert doc["steps"] == report.steps
        assert doc["constraint_violations"] == 0


class TestCli:
    def test_unknown_subcommand(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["frobnicate"])
        assert exc.value.code == 2

    def test_certify_prints_certificate(self, capsys):
        rc = cli.main(["certify", "--weights", str(ASSETS / "model.json")])
        assert rc == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["model"]["rho_A_delta"] < 1.0
        assert doc["model"]["certified"] is True
        assert doc["observer"]["rho_o"] < 1.0
        assert len(doc["tightening"]["a"]) == 6

    def test_simulate_writes_artifacts(self, tmp_path, capsys):
        sc = tiny_physical_scenario(duration_s=100.0)
        sc_path = tmp_path / "sc.json"
        sc.to_json(sc_path)
        rc = cli.main(["simulate", "--scenario", str(sc_path),
                       "--weights", str(ASSETS / "model.json"),
                       "--out", str(tmp_path / "run")])
        assert rc == 0
        assert (tmp_path / "run" / "trace.csv").exists()
        report = json.loads((tmp_path / "run" / "report.json").read_text())
        assert report["constraint_violations"] == 0

    def test_simulate_requires_weights(self, tmp_path, capsys):
        sc = tiny_physical_scenario(duration_s=100.0)
        sc_path = tmp_path / "sc.json"
        sc.to_json(sc_path)
        rc = cli.main(["simulate", "--scenario", str(sc_path),
                       "--out", str(tmp_path / "run")])
        assert rc == 2
        err = json.loads(capsys.readouterr().err)
        assert "weights" in err["message"]

    def test_gen_data_writes_dataset(self, tmp_path, capsys):
        rc = cli.main(["gen-data", "--out", str(tmp_path / "ds"), "--seed", "1",
                       "--n-train", "1", "--n-val", "1", "--n-test", "1",
                       "--steps", "60"])
        assert rc == 0
        ds = sysid.load_dataset(tmp_path / "ds")
        assert len(ds.train) == 1 and len(ds.val) == 1 and len(ds.test) == 1
        assert len(ds.train[0][0]) == 60

    def test_bad_scenario_file_is_machine_readable(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"warp_drive": 1}))
        rc = cli.main(["simulate", "--scenario", str(path), "--out",
                       str(tmp_path / "o")])
        assert rc == 2
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "ValueError"
