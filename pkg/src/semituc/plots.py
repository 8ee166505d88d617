"""Comparison and per-circuit figures from cycle records.

Three overlay plots compare runs over time (running vehicles, cumulative
ended, mean travel time).  For a chosen run, six per-circuit panels show the
main and secondary circuits' occupancy plus the control durations of their
left-side and right-side approaches: an approach is on the circuit's left
when walking the circuit keeps the enclosed cell on that side, so
anticlockwise circuits are fed from the left, clockwise ones from the
right.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .network import Circuit, NetworkModel
from .runner import CycleRecord


def circuit_approach_sides(net: NetworkModel, circuit: Circuit
                           ) -> dict[str, list[tuple[str, int]]]:
    """Classify each circuit junction's two approaches as left or right.

    Returns side -> list of (junction id, stage index).  The approach lying
    on the circuit takes the side the enclosed cell is on (left for
    anticlockwise, right for clockwise); the crossing approach takes the
    opposite side.
    """
    circuit_side = "left" if circuit.orientation == "anticlockwise" else "right"
    other_side = "right" if circuit_side == "left" else "left"
    sides: dict[str, list[tuple[str, int]]] = {"left": [], "right": []}
    for lid in circuit.links:
        jid = net.links[lid].to_junction
        junction = net.junctions[jid]
        stage = junction.stage_of(lid)
        sides[circuit_side].append((jid, stage))
        sides[other_side].append((jid, 1 - stage))
    return sides


def _stage_durations(record: CycleRecord, j_index: int, stage: int
                     ) -> tuple[float, float, float]:
    """(green, yellow, red) of one stage in one cycle record."""
    g, y1, y2, r1, r2 = record.controls[j_index]
    if stage == 0:
        return g, y1, r1
    cycle = g + y1 + r1
    return cycle - g, y2, r2


def _mean_side_series(records: list[CycleRecord], junction_order: list[str],
                      approaches: list[tuple[str, int]]):
    """Per-cycle (green, yellow, red) averaged over a set of approaches."""
    j_of = {jid: i for i, jid in enumerate(junction_order)}
    greens, yellows, reds = [], [], []
    for rec in records:
        trip = [_stage_durations(rec, j_of[jid], stage) for jid, stage in approaches]
        greens.append(sum(t[0] for t in trip) / len(trip))
        yellows.append(sum(t[1] for t in trip) / len(trip))
        reds.append(sum(t[2] for t in trip) / len(trip))
    return greens, yellows, reds


def _overlay(path: str, runs: dict[str, list[CycleRecord]], field: str,
             ylabel: str) -> None:
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for label, records in runs.items():
        xs = [r.clock_s for r in records]
        ys = [getattr(r, field) for r in records]
        ax.plot(xs, ys, label=label, marker="o" if len(records) == 1 else None)
    ax.set_xlabel("time [s]")
    ax.set_ylabel(ylabel)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _controls_panel(path: str, records: list[CycleRecord], title: str,
                    junction_order: list[str],
                    approaches: list[tuple[str, int]]) -> None:
    greens, yellows, reds = _mean_side_series(records, junction_order, approaches)
    xs = [r.clock_s for r in records]
    fig, ax = plt.subplots(figsize=(8, 4.5))
    marker = "o" if len(records) == 1 else None
    ax.plot(xs, greens, color="tab:green", label="green", marker=marker)
    ax.plot(xs, yellows, color="tab:orange", label="yellow", marker=marker)
    ax.plot(xs, reds, color="tab:red", label="red", marker=marker)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("mean duration [s]")
    ax.set_title(title)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _occupancy_panel(path: str, records: list[CycleRecord], kind: str) -> None:
    xs = [r.clock_s for r in records]
    if kind == "main":
        ys = [r.circuit_means[0] for r in records]
    else:
        ys = [sum(r.circuit_means[1:]) / max(1, len(r.circuit_means) - 1)
              for r in records]
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.plot(xs, ys, marker="o" if len(records) == 1 else None)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("mean vehicles per circuit link")
    ax.set_title(f"{kind} circuit occupancy")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def export_plots(runs: dict[str, list[CycleRecord]], out_dir: str, *,
                 net: NetworkModel | None = None,
                 stack_label: str | None = None) -> list[str]:
    """Write the overlay plots, and the six per-circuit panels when a
    network with circuits is supplied.  Returns the written paths."""
    if not runs or any(not recs for recs in runs.values()):
        raise ValueError("export_plots needs at least one nonempty record stream")
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for field, ylabel, name in [
            ("running", "running vehicles", "running.svg"),
            ("ended_cum", "ended vehicles (cumulative)", "ended.svg"),
            ("mean_tt_s", "mean travel time [s]", "mean_tt.svg")]:
        path = os.path.join(out_dir, name)
        _overlay(path, runs, field, ylabel)
        paths.append(path)

    if net is None or not net.circuits:
        return paths
    if stack_label is None:
        stack_label = list(runs)[-1]
    records = runs[stack_label]

    mains = [c for c in net.circuits if c.kind == "main"]
    secondaries = [c for c in net.circuits if c.kind == "secondary"]
    for kind, circuits in [("main", mains), ("secondary", secondaries)]:
        if not circuits:
            continue
        path = os.path.join(out_dir, f"{kind}_occupancy.svg")
        _occupancy_panel(path, records, kind)
        paths.append(path)
        merged: dict[str, list[tuple[str, int]]] = {"left": [], "right": []}
        for circuit in circuits:
            sides = circuit_approach_sides(net, circuit)
            merged["left"] += sides["left"]
            merged["right"] += sides["right"]
        for side in ("left", "right"):
            path = os.path.join(out_dir, f"{kind}_{side}_controls.svg")
            _controls_panel(path, records,
                            f"{kind} circuit, {side}-side approaches ({stack_label})",
                            net.junction_order, merged[side])
            paths.append(path)
    return paths
