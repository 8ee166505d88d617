"""Per-cycle control runtime: feedback law, feasibility projection and
expansion of independent controls into a within-cycle signal schedule.

The feedback law is linear around a nominal plan.  Raw controls may leave
the feasible box, so they are projected by deterministic sequential
clamping before being expanded into per-stage (green, yellow, red)
intervals that the simulator enforces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import ControlPlan, JunctionControls, dependent_controls
from .network import NetworkModel


@dataclass(frozen=True)
class ControlBounds:
    """Feasibility box for one junction's controls."""

    g_min: float
    cycle: float

    def __post_init__(self) -> None:
        if self.g_min < 0:
            raise ValueError(f"g_min {self.g_min} must be nonnegative")
        if 2 * self.g_min > self.cycle:
            raise ValueError(
                f"cycle {self.cycle} cannot host two stages of {self.g_min} s")


def feedback(x: np.ndarray, x_nominal: np.ndarray, u_nominal: np.ndarray,
             gain: np.ndarray) -> np.ndarray:
    """Raw (unprojected) controls u_nominal - L (x - x_nominal)."""
    x = np.asarray(x, dtype=float)
    x_nominal = np.asarray(x_nominal, dtype=float)
    return np.asarray(u_nominal, dtype=float) - np.asarray(gain) @ (x - x_nominal)


def project_controls(raw: ControlPlan, bounds: ControlBounds) -> ControlPlan:
    """Clamp controls onto the feasible box, in the fixed order green,
    first yellow, second yellow.

    The order matters: the yellow caps depend on the clamped green.  The
    result always satisfies every stage bound and projecting twice changes
    nothing.
    """
    c = bounds.cycle
    g = np.clip(raw.greens, bounds.g_min, c - bounds.g_min)
    y1 = np.clip(raw.yellows_first, 0.0, c - g)
    y2 = np.clip(raw.yellows_second, 0.0, g)
    return ControlPlan(g, y1, y2, raw.cycle)


@dataclass(frozen=True)
class SignalSchedule:
    """Signal colors of one junction over a cycle.

    First stage: green on [0, g), yellow on [g, g + y1), red afterwards.
    Second stage: red on [0, g - y2), yellow on [g - y2, g), green on
    [g, c).  A stage's yellow therefore always overlaps the antagonist's
    green: that overlap is the contention window.
    """

    green: float
    yellow_first: float
    yellow_second: float
    red_first: float
    red_second: float
    green_second: float
    cycle: float
    all_red: float = 0.0

    def durations(self) -> dict[str, float]:
        """Read back all six stage durations exactly as expanded."""
        return {"g": self.green, "y1": self.yellow_first, "y2": self.yellow_second,
                "r1": self.red_first, "r2": self.red_second, "g2": self.green_second}

    def intervals(self, stage: int) -> list[tuple[str, float, float]]:
        """Contiguous (color, start, end) intervals of one stage over
        [0, cycle), zero-width intervals dropped."""
        g, y1, y2, c = self.green, self.yellow_first, self.yellow_second, self.cycle
        if stage == 0:
            raw = [("G", 0.0, g), ("Y", g, g + y1), ("R", g + y1, c)]
            if self.all_red > 0.0:
                raw = [("R", 0.0, min(self.all_red, g)),
                       ("G", min(self.all_red, g), g)] + raw[1:]
        elif stage == 1:
            raw = [("R", 0.0, g - y2), ("Y", g - y2, g), ("G", g, c)]
            if self.all_red > 0.0:
                start = min(g + self.all_red, c)
                raw = raw[:2] + [("R", g, start), ("G", start, c)]
        else:
            raise ValueError("stage must be 0 or 1")
        return [(col, a, b) for col, a, b in raw if b > a]

    def color(self, stage: int, t: float) -> str:
        """Signal color shown to ``stage`` at cycle time ``t``."""
        for col, a, b in self.intervals(stage):
            if a <= t < b:
                return col
        return "R"


def expand_schedule(controls: JunctionControls, cycle: float,
                    all_red: float = 0.0) -> SignalSchedule:
    """Expand feasible independent controls into the within-cycle layout.

    ``all_red`` optionally converts the first seconds of each stage's green
    into red to model switching lost time; it is off by default so the
    schedule matches the flow model exactly.
    """
    timings = dependent_controls(controls, cycle)
    return SignalSchedule(green=controls.green,
                          yellow_first=controls.yellow_first,
                          yellow_second=controls.yellow_second,
                          red_first=timings.red_first,
                          red_second=timings.red_second,
                          green_second=timings.green_second,
                          cycle=cycle, all_red=all_red)


def nominal_controls(net: NetworkModel, cycle: float, g_bar: float,
                     g_min: float = 0.0) -> ControlPlan:
    """Nominal plan: every junction runs green ``g_bar`` and each stage's
    yellow fills that stage's entire non-green time (yellow = cycle minus
    the stage's own green), leaving zero nominal red."""
    ControlBounds(g_min, cycle)
    if not g_min <= g_bar <= cycle - g_min:
        raise ValueError(f"nominal green {g_bar} outside [{g_min}, {cycle - g_min}]")
    n = len(net.junction_order)
    return ControlPlan.uniform(n, g_bar, cycle - g_bar, g_bar, cycle)
