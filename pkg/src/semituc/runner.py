"""Scenario execution: offline gain synthesis, the measure/feedback/project/
expand cycle loop against the microscopic simulator, metric collection and
CSV/JSON artifacts, plus the multi-scenario comparison harness.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .config import ScenarioConfig
from .controller import expand_schedule, feedback, nominal_controls, project_controls
from .dynamics import ControlMatrix, ControlPlan, classical_b_matrix, \
    dependent_controls, extended_b_matrix
from .lqr import GainSynthesis, solve_discounted_dare
from .microsim import Simulation
from .network import NetworkModel


@dataclass
class SynthBundle:
    """Everything the per-cycle feedback needs, computed once offline."""

    b_matrix: ControlMatrix
    synthesis: GainSynthesis
    x_nominal: np.ndarray
    u_nominal: np.ndarray
    greens_only: bool             # classical mode or semi with pinned yellows


def synthesize(cfg: ScenarioConfig, net: NetworkModel) -> SynthBundle:
    """Build the mode's control matrix and solve for the stationary gain.

    Classical mode controls one green per junction.  Semi mode adds both
    yellows; with ``pin_yellows`` the extended matrix is restricted to its
    green columns, which reduces the loop to the classical one exactly.
    """
    weights = cfg.weights()
    if cfg.mode == "classical":
        b = classical_b_matrix(net)
        greens_only = True
    else:
        b = extended_b_matrix(net)
        greens_only = cfg.pin_yellows
        if greens_only:
            b = ControlMatrix(b.values[:, 0::3].copy(), b.link_ids,
                              b.control_ids[0::3])
    synthesis = solve_discounted_dare(b, weights)
    if greens_only:
        u_nominal = np.full(len(net.junction_order), float(cfg.g_bar))
    else:
        u_nominal = nominal_controls(net, cfg.cycle, cfg.g_bar, cfg.g_min).stacked()
    x_nominal = np.full(len(net.state_links), float(cfg.x_bar))
    return SynthBundle(b, synthesis, x_nominal, u_nominal, greens_only)


def controls_for(bundle: SynthBundle, cfg: ScenarioConfig,
                 x: np.ndarray) -> ControlPlan:
    """One feedback step: raw law then feasibility projection."""
    raw = feedback(x, bundle.x_nominal, bundle.u_nominal, bundle.synthesis.gain)
    if bundle.greens_only:
        zeros = np.zeros_like(raw)
        plan = ControlPlan(raw, zeros, zeros.copy(), cfg.cycle)
    else:
        plan = ControlPlan.from_stacked(raw, cfg.cycle)
    return project_controls(plan, cfg.bounds())


@dataclass
class CycleRecord:
    """State of the run at one cycle boundary, plus the controls applied
    over the coming cycle."""

    k: int
    clock_s: float
    running: int
    ended_cum: int
    mean_tt_s: float              # nan until the first vehicle ends
    circuit_means: tuple[float, ...]
    controls: tuple[tuple[float, float, float, float, float], ...]


def circuit_metrics(net: NetworkModel, x: np.ndarray) -> list[float]:
    """Mean vehicle count per circuit (net.circuits order) from a state
    vector ordered like net.state_links."""
    idx = net.state_index()
    out = []
    for circuit in net.circuits:
        rows = [idx[l] for l in circuit.links]
        out.append(float(np.mean([x[r] for r in rows])) if rows else 0.0)
    return out


@dataclass
class RunResult:
    config: ScenarioConfig
    summary: dict
    records: list[CycleRecord]
    paths: dict[str, str]


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def write_cycle_log(path: str, records: list[CycleRecord],
                    junction_order: list[str]) -> None:
    header = ["k", "clock_s", "running", "ended_cum", "mean_tt_s"]
    for jid in junction_order:
        header += [f"{jid}.g", f"{jid}.y1", f"{jid}.y2", f"{jid}.r1", f"{jid}.r2"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for rec in records:
            row = [rec.k, f"{rec.clock_s:.1f}", rec.running, rec.ended_cum,
                   _fmt(rec.mean_tt_s)]
            for block in rec.controls:
                row += [_fmt(v) for v in block]
            w.writerow(row)


def read_cycle_log(path: str) -> tuple[list[str], list[list[float]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], [[float(v) for v in row] for row in rows[1:]]


def write_trips(path: str, trips) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["vehicle_id", "origin", "dest", "depart_s", "arrive_s", "tt_s"])
        for vid, origin, dest, depart, arrive, tt in trips:
            w.writerow([vid, origin, dest, f"{depart:.1f}", f"{arrive:.1f}",
                        f"{tt:.1f}"])


def write_circuit_log(path: str, records: list[CycleRecord],
                      net: NetworkModel) -> None:
    labels = circuit_labels(net)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "clock_s"] + labels + ["secondary_avg"])
        for rec in records:
            row = [rec.k, f"{rec.clock_s:.1f}"] + [_fmt(v) for v in rec.circuit_means]
            tail = rec.circuit_means[1:]
            row.append(_fmt(float(np.mean(tail))) if tail else _fmt(float("nan")))
            w.writerow(row)


def circuit_labels(net: NetworkModel) -> list[str]:
    labels = []
    n_sec = 0
    for circuit in net.circuits:
        if circuit.kind == "main":
            labels.append("main")
        else:
            n_sec += 1
            labels.append(f"sec{n_sec}")
    return labels


def run_scenario(cfg: ScenarioConfig, out_dir: str | None = None) -> RunResult:
    """Execute one scenario end to end.

    Synthesis happens first and aborts the run on failure.  The loop then
    measures the state at each cycle boundary, applies the projected
    feedback controls as signal schedules, and advances the simulator one
    cycle.  Per-cycle audits (conservation, overlaps) accumulate into the
    summary; CSV artifacts are written when ``out_dir`` is given.
    """
    net = cfg.build_network()
    bundle = synthesize(cfg, net)

    sim = Simulation(net, cfg.demand_table(), params=cfg.sim_params(),
                     contention=cfg.contention(), cycle=cfg.cycle, seed=cfg.seed)
    junction_order = net.junction_order

    records: list[CycleRecord] = []
    conservation_failures = 0
    overlap_violations = 0
    for k in range(cfg.n_cycles):
        x = sim.measure_state()
        plan = controls_for(bundle, cfg, x)
        controls = []
        for i, jid in enumerate(junction_order):
            jc = plan.at(i)
            sim.apply_schedule(jid, expand_schedule(jc, cfg.cycle, cfg.all_red))
            timings = dependent_controls(jc, cfg.cycle)
            controls.append((jc.green, jc.yellow_first, jc.yellow_second,
                             timings.red_first, timings.red_second))
        records.append(CycleRecord(
            k=k, clock_s=sim.clock, running=sim.running, ended_cum=sim.ended,
            mean_tt_s=sim.mean_travel_time,
            circuit_means=tuple(circuit_metrics(net, x)),
            controls=tuple(controls)))
        sim.run(cfg.cycle)
        if not sim.audit_conservation():
            conservation_failures += 1
        overlap_violations += sim.audit_overlaps()

    circuit_series = np.array([rec.circuit_means for rec in records]) \
        if net.circuits else np.zeros((len(records), 0))
    has_sec = circuit_series.shape[1] > 1
    summary = {
        "mode": cfg.mode,
        "gamma": cfg.gamma,
        "seed": cfg.seed,
        "pin_yellows": cfg.pin_yellows,
        "duration_s": cfg.duration,
        "cycle_s": cfg.cycle,
        "n_cycles": cfg.n_cycles,
        "synthesis": {
            "residual": bundle.synthesis.residual,
            "closed_loop_radius": bundle.synthesis.closed_loop_radius,
            "iterations": bundle.synthesis.iterations,
            "controls": len(bundle.b_matrix.control_ids),
        },
        "totals": {
            "spawned": sim.spawned,
            "ended": sim.ended,
            "final_running": sim.running,
            "final_queued": sim.queued,
            "peak_running": max((r.running for r in records), default=0),
            "mean_tt_s": None if sim.ended == 0 else sim.mean_travel_time,
        },
        "audits": {
            "conservation_failures": conservation_failures,
            "overlap_violations": overlap_violations,
            "red_crossings": sim.red_crossings,
            "cooccupancy_events": sim.cooccupancy_events,
        },
        "circuits": {
            "main_time_avg": float(np.mean(circuit_series[:, 0])) if net.circuits else None,
            "secondary_time_avg": float(np.mean(circuit_series[:, 1:])) if has_sec else None,
        },
        "config": cfg.to_dict(),
    }

    paths: dict[str, str] = {}
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        paths["cycle_log"] = os.path.join(out_dir, "cycle_log.csv")
        paths["trips"] = os.path.join(out_dir, "trips.csv")
        paths["circuits"] = os.path.join(out_dir, "circuits.csv")
        paths["summary"] = os.path.join(out_dir, "summary.json")
        write_cycle_log(paths["cycle_log"], records, junction_order)
        write_trips(paths["trips"], sim.trips)
        write_circuit_log(paths["circuits"], records, net)
        with open(paths["summary"], "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return RunResult(cfg, summary, records, paths)


# Metrics for the cross-run verdict: (summary key, lower-is-better).
_METRICS = {
    "running": ("final_running", True),
    "ended": ("ended", False),
    "mean_tt": ("mean_tt_s", True),
}


@dataclass
class ComparisonReport:
    labels: list[str]
    results: list[RunResult]
    finals: dict[str, dict[str, float]]       # metric -> label -> value
    deltas: dict[str, dict[str, float]]       # metric -> label -> value - baseline
    verdicts: dict[str, str]                  # metric -> best label
    paths: dict[str, str]


def run_label(cfg: ScenarioConfig, with_seed: bool) -> str:
    label = cfg.mode
    if cfg.mode == "semi":
        label += f"-g{cfg.gamma:g}"
        if cfg.pin_yellows:
            label += "-pinned"
    if with_seed:
        label += f"-s{cfg.seed}"
    return label


def compare(configs: list[ScenarioConfig], out_dir: str | None = None,
            labels: list[str] | None = None) -> ComparisonReport:
    """Run several scenarios that differ only in mode, gamma or seed and
    report aligned series, per-metric deltas against the first config, and
    which run wins each metric."""
    if len(configs) < 2:
        raise ValueError("compare needs at least two configs")
    frozen = []
    for cfg in configs:
        d = cfg.to_dict()
        for key in ("mode", "gamma", "seed", "pin_yellows"):
            d.pop(key)
        frozen.append(json.dumps(d, sort_keys=True))
    if any(f != frozen[0] for f in frozen):
        raise ValueError("configs must differ only in mode, gamma or seed")

    if labels is None:
        seeds_vary = len({cfg.seed for cfg in configs}) > 1
        labels = [run_label(cfg, seeds_vary) for cfg in configs]
        seen: dict[str, int] = {}
        for i, lab in enumerate(labels):
            seen[lab] = seen.get(lab, 0) + 1
            if seen[lab] > 1:
                labels[i] = f"{lab}#{seen[lab]}"
    if len(labels) != len(configs):
        raise ValueError("labels must match configs")

    results = [run_scenario(cfg, os.path.join(out_dir, lab) if out_dir else None)
               for cfg, lab in zip(configs, labels)]

    finals: dict[str, dict[str, float]] = {}
    deltas: dict[str, dict[str, float]] = {}
    verdicts: dict[str, str] = {}
    for metric, (key, lower_better) in _METRICS.items():
        vals = {}
        for lab, res in zip(labels, results):
            v = res.summary["totals"][key]
            vals[lab] = float("nan") if v is None else float(v)
        finals[metric] = vals
        base = vals[labels[0]]
        deltas[metric] = {lab: vals[lab] - base for lab in labels}
        ranked = sorted(labels, key=lambda lab: (vals[lab] if lower_better
                                                 else -vals[lab], labels.index(lab)))
        verdicts[metric] = ranked[0]

    paths: dict[str, str] = {}
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        paths["comparison"] = os.path.join(out_dir, "comparison.csv")
        paths["verdicts"] = os.path.join(out_dir, "verdicts.json")
        with open(paths["comparison"], "w", newline="") as fh:
            w = csv.writer(fh)
            header = ["k", "clock_s"]
            for lab in labels:
                header += [f"running_{lab}", f"ended_{lab}", f"tt_{lab}"]
            w.writerow(header)
            for i in range(len(results[0].records)):
                row = [results[0].records[i].k, f"{results[0].records[i].clock_s:.1f}"]
                for res in results:
                    rec = res.records[i]
                    row += [rec.running, rec.ended_cum, _fmt(rec.mean_tt_s)]
                w.writerow(row)
        with open(paths["verdicts"], "w") as fh:
            json.dump({"labels": labels, "finals": finals, "deltas": deltas,
                       "verdicts": verdicts}, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return ComparisonReport(labels, results, finals, deltas, verdicts, paths)
