"""Per-cycle store-and-forward dynamics with contention windows.

Each junction alternates two stages.  The first stage holds green for ``g``
seconds out of the cycle ``c``, the second for ``c - g``.  Each stage may
append a yellow (contention) window of its own: during a stage's yellow the
antagonist already/still shows green, both streams discharge, and a friction
coefficient ``gamma`` scales the flows that share the junction.

For an approach ``f`` with antagonist ``o`` the per-cycle discharge toward a
downstream link ``b`` is

    Q_fb = alpha_fb * s_f * (g_f - y_o) + gamma * alpha_fb * s_f * y_o
           + gamma * (q_max - s_o) * y_f

i.e. full-rate discharge while the antagonist is red, friction-scaled
discharge while the antagonist's yellow overlaps the green, plus the spare
junction capacity exploited during the approach's own yellow.  Setting both
yellows to zero recovers the classical split-only model exactly.

All controls are in seconds, saturation flows in veh/s, so flows are
vehicles per cycle.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .network import Junction, NetworkModel


class InfeasibleControls(ValueError):
    """Controls violate the stage feasibility bounds."""


@dataclass(frozen=True)
class JunctionControls:
    """Independent controls of one junction: the first-stage green and both
    stage yellows.  Everything else follows from the cycle length."""

    green: float
    yellow_first: float
    yellow_second: float


@dataclass(frozen=True)
class StageTimings:
    """Dependent quantities implied by the independent controls."""

    red_first: float
    red_second: float
    green_second: float


def dependent_controls(controls: JunctionControls, cycle: float) -> StageTimings:
    """Resolve the dependent durations; raises when any would be negative.

    red_first = c - g - y_first, red_second = g - y_second and
    green_second = c - g, so the two stages tile the cycle exactly.
    """
    if cycle <= 0:
        raise InfeasibleControls(f"cycle {cycle} must be positive")
    g, y1, y2 = controls.green, controls.yellow_first, controls.yellow_second
    if y1 < 0 or y2 < 0:
        raise InfeasibleControls(f"negative yellow: y1={y1}, y2={y2}")
    if not 0 <= g <= cycle:
        raise InfeasibleControls(f"green {g} outside [0, {cycle}]")
    r1 = cycle - g - y1
    r2 = g - y2
    if r1 < 0:
        raise InfeasibleControls(f"first-stage red {r1} < 0 (y1 too long)")
    if r2 < 0:
        raise InfeasibleControls(f"second-stage red {r2} < 0 (y2 too long)")
    return StageTimings(red_first=r1, red_second=r2, green_second=cycle - g)


@dataclass
class ControlPlan:
    """Independent controls for every junction of a network, ordered like
    ``net.junction_order``."""

    greens: np.ndarray
    yellows_first: np.ndarray
    yellows_second: np.ndarray
    cycle: float

    @classmethod
    def uniform(cls, n_junctions: int, green: float, yellow_first: float,
                yellow_second: float, cycle: float) -> "ControlPlan":
        return cls(np.full(n_junctions, float(green)),
                   np.full(n_junctions, float(yellow_first)),
                   np.full(n_junctions, float(yellow_second)), cycle)

    @classmethod
    def from_stacked(cls, stacked: np.ndarray, cycle: float) -> "ControlPlan":
        """Inverse of ``stacked``: per junction (g, y1, y2) interleaved."""
        v = np.asarray(stacked, dtype=float)
        if v.ndim != 1 or v.size % 3:
            raise ValueError("stacked control vector length must be 3 * junctions")
        return cls(v[0::3].copy(), v[1::3].copy(), v[2::3].copy(), cycle)

    def stacked(self) -> np.ndarray:
        """Interleaved (g, y1, y2) per junction; the control vector that the
        extended B matrix multiplies."""
        out = np.empty(3 * self.greens.size)
        out[0::3] = self.greens
        out[1::3] = self.yellows_first
        out[2::3] = self.yellows_second
        return out

    def at(self, junction_index: int) -> JunctionControls:
        return JunctionControls(float(self.greens[junction_index]),
                                float(self.yellows_first[junction_index]),
                                float(self.yellows_second[junction_index]))

    def copy(self) -> "ControlPlan":
        return ControlPlan(self.greens.copy(), self.yellows_first.copy(),
                           self.yellows_second.copy(), self.cycle)


def _roles(net: NetworkModel, junction: Junction, from_id: str,
           controls: JunctionControls, cycle: float):
    """(g_own, y_own, y_other, s_own, s_other) for one approach.

    The first stage owns ``green`` and ``yellow_first``; the second stage
    owns ``cycle - green`` and ``yellow_second``.
    """
    other_id = junction.incoming[1 - junction.stage_of(from_id)]
    s_own = net.links[from_id].sat_flow
    s_other = net.links[other_id].sat_flow
    if junction.stage_of(from_id) == 0:
        return controls.green, controls.yellow_first, controls.yellow_second, s_own, s_other
    return cycle - controls.green, controls.yellow_second, controls.yellow_first, s_own, s_other


def _discharge(g_own: float, y_own: float, y_other: float, s_own: float,
               s_other: float, q_max: float, gamma: float, share: float) -> float:
    """Common three-term discharge expression; ``share`` is the turn ratio
    (1.0 for total outflow)."""
    if q_max < s_other:
        raise ValueError(
            f"junction capacity {q_max} below antagonist saturation flow {s_other}")
    return (share * s_own * (g_own - y_other)
            + gamma * share * s_own * y_other
            + gamma * (q_max - s_other) * y_own)


def flow_between(net: NetworkModel, from_id: str, to_id: str,
                 controls: JunctionControls, cycle: float) -> float:
    """Vehicles sent from ``from_id`` onto ``to_id`` during one cycle."""
    link = net.links[from_id]
    if link.to_junction is None:
        raise ValueError(f"{from_id} has no downstream junction")
    junction = net.junctions[link.to_junction]
    if net.links[to_id].from_junction != junction.id:
        raise ValueError(f"{to_id} does not leave junction {junction.id}")
    dependent_controls(controls, cycle)
    g_own, y_own, y_other, s_own, s_other = _roles(net, junction, from_id, controls, cycle)
    share = net.turn_ratios.ratio(from_id, to_id)
    return _discharge(g_own, y_own, y_other, s_own, s_other,
                      junction.capacity, junction.friction, share)


def outflow(net: NetworkModel, link_id: str, controls: JunctionControls,
            cycle: float) -> float:
    """Total vehicles discharged by ``link_id`` during one cycle."""
    link = net.links[link_id]
    if link.to_junction is None:
        raise ValueError(f"{link_id} has no downstream junction")
    junction = net.junctions[link.to_junction]
    dependent_controls(controls, cycle)
    g_own, y_own, y_other, s_own, s_other = _roles(net, junction, link_id, controls, cycle)
    return _discharge(g_own, y_own, y_other, s_own, s_other,
                      junction.capacity, junction.friction, 1.0)


def predict_state(net: NetworkModel, x: np.ndarray, plan: ControlPlan,
                  demands: np.ndarray, *, clamp: bool = True
                  ) -> tuple[np.ndarray, np.ndarray]:
    """One-cycle state update x' = x + d + inflows - outflow per link.

    ``x`` and ``demands`` (veh/cycle) are ordered like ``net.state_links``.
    Returns (next state, boolean mask of links where the [0, storage] clamp
    actually bound).  Clamping belongs to the physical reading of the state;
    pass ``clamp=False`` for the raw linear model.
    """
    order = net.state_links
    idx = net.state_index()
    jidx = {jid: i for i, jid in enumerate(net.junction_order)}
    x = np.asarray(x, dtype=float)
    demands = np.asarray(demands, dtype=float)
    if x.shape != (len(order),) or demands.shape != (len(order),):
        raise ValueError("state and demand vectors must match net.state_links")

    nxt = x + demands
    for lid in order:
        row = idx[lid]
        link = net.links[lid]
        controls = plan.at(jidx[link.to_junction])
        nxt[row] -= outflow(net, lid, controls, plan.cycle)
        # Inflow from each approach of the upstream junction.
        if link.from_junction is not None:
            up = net.junctions[link.from_junction]
            up_controls = plan.at(jidx[up.id])
            for approach in up.incoming:
                if net.turn_ratios.ratio(approach, lid) > 0.0:
                    nxt[row] += flow_between(net, approach, lid, up_controls, plan.cycle)

    clamped = np.zeros(len(order), dtype=bool)
    if clamp:
        caps = np.array([net.links[lid].storage for lid in order], dtype=float)
        lo = np.clip(nxt, 0.0, caps)
        clamped = lo != nxt
        nxt = lo
    return nxt, clamped


@dataclass
class ControlMatrix:
    """Sensitivity of next-cycle link counts to the independent controls."""

    values: np.ndarray            # rows: state links, cols: controls
    link_ids: list[str]
    control_ids: list[str]

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["link_id"] + self.control_ids)
            for i, lid in enumerate(self.link_ids):
                w.writerow([lid] + [repr(float(v)) for v in self.values[i]])


def _column_rows(net: NetworkModel, junction: Junction,
                 idx: dict[str, int]) -> dict:
    """Bundle the per-junction quantities every column derivation needs."""
    f1, f2 = junction.incoming
    s1 = net.links[f1].sat_flow
    s2 = net.links[f2].sat_flow
    down1 = [(idx[b], r) for b, r in net.turn_ratios.successors(f1) if b in idx]
    down2 = [(idx[b], r) for b, r in net.turn_ratios.successors(f2) if b in idx]
    return {"row1": idx[f1], "row2": idx[f2], "s1": s1, "s2": s2,
            "down1": down1, "down2": down2}


def _green_column(col: np.ndarray, ctx: dict) -> None:
    """d(state)/d(green): the first stage gains discharge time one-for-one,
    the second loses it (its green is c - g)."""
    s1, s2 = ctx["s1"], ctx["s2"]
    col[ctx["row1"]] += -s1
    col[ctx["row2"]] += s2
    for row, share in ctx["down1"]:
        col[row] += share * s1
    for row, share in ctx["down2"]:
        col[row] += -share * s2


def _yellow_column(col: np.ndarray, ctx: dict, own_first: bool,
                   q_max: float, gamma: float) -> None:
    """d(state)/d(yellow of one stage).

    The yellow's owner taps the spare capacity gamma * (q_max - s_other);
    the antagonist keeps discharging through it at friction rate, replacing
    full-rate green time, a gain of s * (gamma - 1) per second.
    """
    if own_first:
        row_own, row_oth = ctx["row1"], ctx["row2"]
        s_own, s_oth = ctx["s1"], ctx["s2"]
        down_own, down_oth = ctx["down1"], ctx["down2"]
    else:
        row_own, row_oth = ctx["row2"], ctx["row1"]
        s_own, s_oth = ctx["s2"], ctx["s1"]
        down_own, down_oth = ctx["down2"], ctx["down1"]
    spare = gamma * (q_max - s_oth)
    col[row_own] += -spare
    col[row_oth] += -s_oth * (gamma - 1.0)
    for row, share in down_own:
        col[row] += spare
    for row, share in down_oth:
        col[row] += share * s_oth * (gamma - 1.0)


def classical_b_matrix(net: NetworkModel) -> ControlMatrix:
    """One column per junction: sensitivity of the state to the first-stage
    green with the complementary second-stage green substituted."""
    order = net.state_links
    idx = net.state_index()
    values = np.zeros((len(order), len(net.junction_order)))
    control_ids = []
    for j, jid in enumerate(net.junction_order):
        ctx = _column_rows(net, net.junctions[jid], idx)
        _green_column(values[:, j], ctx)
        control_ids.append(f"{jid}.g")
    return ControlMatrix(values, list(order), control_ids)


def extended_b_matrix(net: NetworkModel) -> ControlMatrix:
    """Three columns per junction: green, first-stage yellow, second-stage
    yellow.  The green columns coincide with the classical matrix, so
    zeroing the yellows reduces the extended model to the classical one."""
    order = net.state_links
    idx = net.state_index()
    values = np.zeros((len(order), 3 * len(net.junction_order)))
    control_ids = []
    for j, jid in enumerate(net.junction_order):
        junction = net.junctions[jid]
        ctx = _column_rows(net, junction, idx)
        _green_column(values[:, 3 * j], ctx)
        _yellow_column(values[:, 3 * j + 1], ctx, True, junction.capacity, junction.friction)
        _yellow_column(values[:, 3 * j + 2], ctx, False, junction.capacity, junction.friction)
        control_ids += [f"{jid}.g", f"{jid}.y1", f"{jid}.y2"]
    return ControlMatrix(values, list(order), control_ids)
