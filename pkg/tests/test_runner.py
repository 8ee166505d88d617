"""Scenario configs, the end-to-end runner, comparisons, plots and the CLI."""

import dataclasses
import json
import math
import os

import numpy as np
import pytest

from semituc.cli import main
from semituc.config import ConfigError, ScenarioConfig, from_dict, load_config, \
    validate_config
from semituc.lqr import read_gain_csv
from semituc.network import build_grid
from semituc.plots import circuit_approach_sides, export_plots
from semituc.runner import CycleRecord, circuit_metrics, compare, \
    read_cycle_log, run_label, run_scenario

BASELINE = os.path.join(os.path.dirname(__file__), os.pardir, "configs",
                        "baseline.json")


def good_raw():
    with open(BASELINE) as fh:
        return json.load(fh)


def quick_config(**overrides):
    """A short, light run for integration smoke tests."""
    cfg = load_config(BASELINE)
    demand = {(o, d): (r if "central" in (o, d) else 200.0)
              for (o, d), r in cfg.demand.items()}
    changes = dict(demand=demand, duration=600.0, seed=7)
    changes.update(overrides)
    return dataclasses.replace(cfg, **changes)


class TestConfigLoading:
    def test_baseline_round_trip(self):
        cfg = load_config(BASELINE)
        assert (cfg.rows, cfg.cols) == (4, 4)
        assert cfg.sat_flow == pytest.approx(0.5)   # 1800 veh/h
        assert cfg.mode == "semi" and cfg.gamma == 0.3
        assert cfg.cycle == 60.0 and cfg.g_bar == 30.0 and cfg.x_bar == 10.5
        assert cfg.demand[("north", "south")] == 385.0
        assert cfg.demand[("central", "west")] == 40.0
        assert cfg.seed == 2 and cfg.n_cycles == 360
        assert validate_config(cfg) == []

    def test_missing_sections_are_named(self):
        with pytest.raises(ConfigError) as err:
            from_dict({})
        text = str(err.value)
        for name in ("network", "control", "run", "demand_veh_h"):
            assert name in text

    def test_field_violations_are_named(self):
        raw = good_raw()
        raw["control"]["gamma"] = 2.0
        raw["control"]["g_bar_s"] = 59.0
        raw["demand_veh_h"]["north"]["south"] = -5.0
        raw["run"]["duration_s"] = 90.5
        with pytest.raises(ConfigError) as err:
            from_dict(raw)
        text = str(err.value)
        assert "gamma" in text
        assert "g_bar_s" in text
        assert "north->south" in text
        assert "duration_s" in text

    def test_all_violations_reported_together(self):
        raw = good_raw()
        raw["network"]["rows"] = 1
        raw["control"]["cycle_s"] = -60.0
        with pytest.raises(ConfigError) as err:
            from_dict(raw)
        assert len(err.value.violations) >= 2

    def test_invalid_json_file(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError) as err:
            load_config(str(path))
        assert "JSON" in str(err.value)

    def test_central_self_demand_rejected(self):
        raw = good_raw()
        raw["demand_veh_h"]["central"]["central"] = 10.0
        with pytest.raises(ConfigError) as err:
            from_dict(raw)
        assert "central->central" in str(err.value)


class TestRunScenario:
    def test_zero_demand_is_a_quiet_run(self):
        cfg = ScenarioConfig(mode="semi", gamma=0.3,
                             demand={("north", "south"): 0.0}, duration=600.0)
        res = run_scenario(cfg)
        totals = res.summary["totals"]
        assert totals["spawned"] == 0 and totals["ended"] == 0
        assert totals["final_running"] == 0 and totals["mean_tt_s"] is None
        assert len(res.records) == cfg.n_cycles
        assert all(rec.running == 0 for rec in res.records)
        assert all(v == 0.0 for rec in res.records for v in rec.circuit_means)
        assert res.summary["audits"]["conservation_failures"] == 0

    def test_record_stream_and_tiling_invariants(self):
        cfg = quick_config()
        res = run_scenario(cfg)
        assert len(res.records) == round(cfg.duration / cfg.cycle)
        for rec in res.records:
            assert rec.k == res.records.index(rec)
            for g, y1, y2, r1, r2 in rec.controls:
                assert g + y1 + r1 == pytest.approx(cfg.cycle, abs=1e-9)
                assert (cfg.cycle - g) + y2 + r2 == pytest.approx(cfg.cycle,
                                                                  abs=1e-9)

    def test_artifacts_written_and_parseable(self, tmp_path):
        cfg = quick_config()
        res = run_scenario(cfg, str(tmp_path))
        for key in ("cycle_log", "trips", "circuits", "summary"):
            assert os.path.exists(res.paths[key])
        header, rows = read_cycle_log(res.paths["cycle_log"])
        assert header[:5] == ["k", "clock_s", "running", "ended_cum", "mean_tt_s"]
        assert header[5:10] == ["J0_0.g", "J0_0.y1", "J0_0.y2", "J0_0.r1",
                                "J0_0.r2"]
        assert len(header) == 5 + 5 * 16
        assert len(rows) == len(res.records)
        with open(res.paths["trips"]) as fh:
            first = fh.readline().strip()
        assert first == "vehicle_id,origin,dest,depart_s,arrive_s,tt_s"
        with open(res.paths["circuits"]) as fh:
            circ_header = fh.readline().strip().split(",")
        assert circ_header == ["k", "clock_s", "main", "sec1", "sec2", "sec3",
                               "sec4", "secondary_avg"]
        summary = json.load(open(res.paths["summary"]))
        assert summary["totals"]["spawned"] == res.summary["totals"]["spawned"]
        assert summary["circuits"]["main_time_avg"] is not None

    def test_same_seed_gives_byte_identical_artifacts(self, tmp_path):
        cfg = quick_config(duration=300.0)
        a = run_scenario(cfg, str(tmp_path / "a"))
        b = run_scenario(cfg, str(tmp_path / "b"))
        for key in ("cycle_log", "trips", "circuits"):
            with open(a.paths[key], "rb") as fh:
                blob_a = fh.read()
            with open(b.paths[key], "rb") as fh:
                blob_b = fh.read()
            assert blob_a == blob_b

    def test_mean_tt_is_nan_until_first_arrival(self):
        cfg = quick_config(duration=300.0)
        res = run_scenario(cfg)
        assert math.isnan(res.records[0].mean_tt_s)
        assert not math.isnan(res.records[-1].mean_tt_s)


class TestCircuitMetrics:
    def test_empty_network_state(self):
        net = build_grid(4, 4, 300.0, 0.5)
        x = np.zeros(len(net.state_links))
        assert circuit_metrics(net, x) == [0.0] * 5

    def test_uniform_occupancy(self):
        net = build_grid(4, 4, 300.0, 0.5)
        x = np.full(len(net.state_links), 5.0)
        assert circuit_metrics(net, x) == [5.0] * 5

    def test_congested_main_is_distinguishable(self):
        net = build_grid(4, 4, 300.0, 0.5)
        idx = net.state_index()
        x = np.full(len(net.state_links), 2.0)
        for lid in net.circuits[0].links:
            x[idx[lid]] = 20.0
        means = circuit_metrics(net, x)
        assert means[0] == 20.0
        # The secondary circuits are link-disjoint from the main one, so
        # they stay at the background occupancy.
        assert means[1:] == [2.0] * 4


class TestCompare:
    def test_two_mode_comparison(self, tmp_path):
        base = quick_config(duration=300.0)
        classical = dataclasses.replace(base, mode="classical")
        report = compare([classical, base], str(tmp_path))
        assert report.labels == ["classical", "semi-g0.3"]
        for metric in ("running", "ended", "mean_tt"):
            assert set(report.finals[metric]) == set(report.labels)
            assert report.deltas[metric]["classical"] == 0.0
            assert report.verdicts[metric] in report.labels
        for label in report.labels:
            assert os.path.exists(os.path.join(str(tmp_path), label,
                                               "summary.json"))
        assert os.path.exists(report.paths["comparison"])
        assert os.path.exists(report.paths["verdicts"])

    def test_deltas_are_antisymmetric(self):
        base = quick_config(duration=300.0)
        classical = dataclasses.replace(base, mode="classical")
        ab = compare([classical, base])
        ba = compare([base, classical])
        for metric in ("running", "ended", "mean_tt"):
            forward = ab.deltas[metric]["semi-g0.3"]
            backward = ba.deltas[metric]["classical"]
            assert forward == -backward

    def test_verdict_matches_the_finals(self):
        base = quick_config(duration=300.0)
        report = compare([dataclasses.replace(base, mode="classical"), base])
        assert report.verdicts["running"] == min(
            report.labels, key=lambda lab: report.finals["running"][lab])
        assert report.verdicts["ended"] == max(
            report.labels, key=lambda lab: report.finals["ended"][lab])

    def test_rejects_single_config(self):
        with pytest.raises(ValueError):
            compare([quick_config()])

    def test_rejects_structural_differences(self):
        base = quick_config(duration=300.0)
        other = dataclasses.replace(base, duration=600.0)
        with pytest.raises(ValueError):
            compare([base, other])

    def test_seed_labels_and_duplicates(self):
        base = quick_config(duration=300.0)
        assert run_label(base, with_seed=True) == "semi-g0.3-s7"
        assert run_label(dataclasses.replace(base, pin_yellows=True),
                         with_seed=False) == "semi-g0.3-pinned"
        twin = dataclasses.replace(base)
        report = compare([base, twin], labels=None)
        assert report.labels == ["semi-g0.3", "semi-g0.3#2"]


class TestPlots:
    def _records(self, n, with_nan=False):
        recs = []
        for k in range(n):
            tt = float("nan") if with_nan and k < 2 else 100.0 + k
            controls = tuple((30.0, 10.0, 5.0, 20.0, 25.0) for _ in range(16))
            recs.append(CycleRecord(k=k, clock_s=60.0 * k, running=10 * k,
                                    ended_cum=5 * k, mean_tt_s=tt,
                                    circuit_means=(3.0, 1.0, 1.0, 1.0, 1.0),
                                    controls=controls))
        return recs

    def test_overlays_only(self, tmp_path):
        paths = export_plots({"a": self._records(5), "b": self._records(5)},
                             str(tmp_path))
        assert [os.path.basename(p) for p in paths] == \
            ["running.svg", "ended.svg", "mean_tt.svg"]
        assert all(os.path.getsize(p) > 0 for p in paths)

    def test_full_panel_set(self, tmp_path):
        net = build_grid(4, 4, 300.0, 0.5)
        paths = export_plots({"semi": self._records(5)}, str(tmp_path),
                             net=net, stack_label="semi")
        names = {os.path.basename(p) for p in paths}
        assert names == {"running.svg", "ended.svg", "mean_tt.svg",
                         "main_occupancy.svg", "main_left_controls.svg",
                         "main_right_controls.svg", "secondary_occupancy.svg",
                         "secondary_left_controls.svg",
                         "secondary_right_controls.svg"}

    def test_single_record_and_nan_gap(self, tmp_path):
        net = build_grid(4, 4, 300.0, 0.5)
        paths = export_plots({"one": self._records(1, with_nan=True)},
                             str(tmp_path / "single"), net=net)
        assert all(os.path.getsize(p) > 0 for p in paths)
        paths = export_plots({"gap": self._records(6, with_nan=True)},
                             str(tmp_path / "gap"))
        assert all(os.path.getsize(p) > 0 for p in paths)

    def test_rejects_empty_input(self, tmp_path):
        with pytest.raises(ValueError):
            export_plots({}, str(tmp_path))
        with pytest.raises(ValueError):
            export_plots({"a": []}, str(tmp_path))

    def test_approach_sides_follow_orientation(self):
        net = build_grid(4, 4, 300.0, 0.5)
        main = net.circuits[0]
        sides = circuit_approach_sides(net, main)
        on_circuit = {(net.links[lid].to_junction,
                       net.junctions[net.links[lid].to_junction].stage_of(lid))
                      for lid in main.links}
        assert set(sides["left"]) == on_circuit       # anticlockwise
        assert set(sides["right"]).isdisjoint(on_circuit)
        assert len(sides["right"]) == len(main.links)
        secondary = net.circuits[1]
        sec_sides = circuit_approach_sides(net, secondary)
        sec_on_circuit = {(net.links[lid].to_junction,
                           net.junctions[net.links[lid].to_junction].stage_of(lid))
                          for lid in secondary.links}
        assert set(sec_sides["right"]) == sec_on_circuit   # clockwise


class TestCli:
    def test_grid_command(self, tmp_path, capsys):
        assert main(["grid", "--rows", "4", "--cols", "4",
                     "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "circuits: 5" in out
        assert os.path.exists(tmp_path / "nodes.csv")
        assert os.path.exists(tmp_path / "edges.csv")

    def test_synth_command(self, tmp_path, capsys):
        assert main(["synth", "--config", BASELINE, "--out", str(tmp_path)]) == 0
        gain, control_ids, link_ids = read_gain_csv(str(tmp_path / "gain.csv"))
        assert gain.shape == (48, 32)
        assert len(control_ids) == 48 and len(link_ids) == 32
        assert "DARE residual" in capsys.readouterr().out

    def test_run_command(self, tmp_path, capsys):
        assert main(["run", "--config", BASELINE, "--duration", "300",
                     "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "spawned:" in out
        _, rows = read_cycle_log(str(tmp_path / "cycle_log.csv"))
        assert len(rows) == 5

    def test_run_with_plots(self, tmp_path):
        assert main(["run", "--config", BASELINE, "--duration", "300",
                     "--out", str(tmp_path), "--plots"]) == 0
        assert os.path.exists(tmp_path / "running.svg")
        assert os.path.exists(tmp_path / "main_left_controls.svg")

    def test_compare_command(self, tmp_path, capsys):
        assert main(["compare", "--config", BASELINE, "--duration", "300",
                     "--gammas", "0.3", "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "verdicts:" in out
        assert os.path.exists(tmp_path / "classical" / "summary.json")
        assert os.path.exists(tmp_path / "semi-g0.3" / "summary.json")

    def test_config_error_exits_1(self, tmp_path, capsys):
        raw = good_raw()
        raw["control"]["gamma"] = 5.0
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(raw))
        assert main(["run", "--config", str(path)]) == 1
        assert "error:" in capsys.readouterr().err

    def test_runtime_failure_exits_2(self, capsys):
        assert main(["run", "--config", BASELINE, "--duration", "300",
                     "--out", "/proc/nonexistent/out"]) == 2
        assert "failure:" in capsys.readouterr().err

    def test_override_flags_reach_the_run(self, tmp_path):
        assert main(["run", "--config", BASELINE, "--duration", "300",
                     "--mode", "classical", "--seed", "9",
                     "--out", str(tmp_path)]) == 0
        summary = json.load(open(tmp_path / "summary.json"))
        assert summary["mode"] == "classical"
        assert summary["seed"] == 9
