"""Scenario configuration: JSON loading, validation, unit conversion.

A scenario file fully determines a run: grid geometry, demand rates between
zones, control mode and weights, nominal plan, contention distances,
duration and seed.  Rates are stated in veh/h and converted once here;
everything downstream works in SI units (seconds, meters, veh/s).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .controller import ControlBounds
from .lqr import LqWeights
from .microsim import ContentionParams, DemandTable, SimParams
from .network import NetworkModel, build_grid, validate

MODES = ("classical", "semi")


class ConfigError(ValueError):
    """Invalid scenario configuration; message lists every violation."""

    def __init__(self, violations: list[str]):
        super().__init__("invalid scenario config:\n  - " + "\n  - ".join(violations))
        self.violations = violations


@dataclass
class ScenarioConfig:
    # network
    rows: int = 4
    cols: int = 4
    link_length: float = 300.0        # m
    sat_flow: float = 0.5             # veh/s (JSON input is veh/h)
    capacity_factor: float = 1.1      # junction capacity / max approach sat flow
    # control
    mode: str = "semi"
    gamma: float = 0.5
    cycle: float = 60.0               # s
    g_min: float = 4.0                # s
    g_bar: float = 30.0               # s
    x_bar: float = 10.5               # veh per link
    control_weight: float = 0.5       # r of R = r I
    discount: float = 0.1             # lambda
    all_red: float = 0.0              # optional switching lost time, s
    pin_yellows: bool = False         # force yellows to 0 in semi mode
    # contention rule
    yield_distance: float = 15.0      # m
    lookout_distance: float = 50.0    # m
    # demand, veh/h between zones
    demand: dict[tuple[str, str], float] = field(default_factory=dict)
    # run
    duration: float = 21600.0         # s
    seed: int = 0

    # -- derived builders ---------------------------------------------------

    def build_network(self) -> NetworkModel:
        net = build_grid(self.rows, self.cols, self.link_length, self.sat_flow,
                         friction=self.gamma, capacity_factor=self.capacity_factor)
        problems = validate(net)
        if problems:
            raise ConfigError([f"network invariant: {p}" for p in problems])
        return net

    def demand_table(self) -> DemandTable:
        return DemandTable(dict(self.demand))

    def weights(self) -> LqWeights:
        return LqWeights(1.0, self.control_weight, self.discount)

    def bounds(self) -> ControlBounds:
        return ControlBounds(self.g_min, self.cycle)

    def contention(self) -> ContentionParams:
        return ContentionParams(self.yield_distance, self.lookout_distance)

    def sim_params(self) -> SimParams:
        return SimParams()

    @property
    def n_cycles(self) -> int:
        return round(self.duration / self.cycle)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["demand"] = {f"{o}->{dd}": r for (o, dd), r in sorted(self.demand.items())}
        return d


def _check(cfg: ScenarioConfig) -> list[str]:
    bad = []
    if cfg.rows < 2 or cfg.cols < 2:
        bad.append("network: rows and cols must be >= 2")
    if cfg.link_length <= 0:
        bad.append("network: link_length_m must be positive")
    if cfg.sat_flow <= 0:
        bad.append("network: sat_flow_veh_h must be positive")
    if cfg.capacity_factor < 1.0:
        bad.append("network: capacity_factor must be >= 1 (junction capacity "
                   "covers the strongest approach)")
    if cfg.mode not in MODES:
        bad.append(f"control: mode must be one of {MODES}, got {cfg.mode!r}")
    if not 0.0 <= cfg.gamma <= 1.0:
        bad.append("control: gamma must lie in [0, 1]")
    if cfg.cycle <= 0:
        bad.append("control: cycle_s must be positive")
    if cfg.g_min < 0 or 2 * cfg.g_min > cfg.cycle:
        bad.append("control: need 0 <= 2 * g_min_s <= cycle_s")
    elif not cfg.g_min <= cfg.g_bar <= cfg.cycle - cfg.g_min:
        bad.append("control: g_bar_s must lie in [g_min_s, cycle_s - g_min_s]")
    if cfg.x_bar < 0:
        bad.append("control: x_bar_veh must be nonnegative")
    if cfg.control_weight <= 0:
        bad.append("weights: control_r must be strictly positive")
    if cfg.discount < 0:
        bad.append("weights: discount must be nonnegative")
    if cfg.all_red < 0:
        bad.append("control: all_red_s must be nonnegative")
    if not 0 < cfg.yield_distance < cfg.lookout_distance:
        bad.append("contention: need 0 < yield_distance_m < lookout_distance_m")
    if not cfg.demand:
        bad.append("demand_veh_h: demand table missing or empty")
    for (o, d), rate in cfg.demand.items():
        if rate < 0:
            bad.append(f"demand_veh_h: negative rate for {o}->{d}")
    if cfg.demand.get(("central", "central"), 0.0) != 0.0:
        bad.append("demand_veh_h: central->central must be zero")
    if cfg.duration <= 0:
        bad.append("run: duration_s must be positive")
    elif cfg.cycle > 0 and abs(cfg.duration / cfg.cycle - round(cfg.duration / cfg.cycle)) > 1e-9:
        bad.append("run: duration_s must be a whole number of cycles")
    if int(cfg.seed) != cfg.seed:
        bad.append("run: seed must be an integer")
    return bad


def from_dict(raw: dict) -> ScenarioConfig:
    """Build and validate a config from parsed JSON, converting veh/h."""
    bad: list[str] = []

    def section(name: str) -> dict:
        part = raw.get(name)
        if part is None:
            bad.append(f"missing section {name!r}")
            return {}
        return part

    net = section("network")
    ctl = section("control")
    run = section("run")
    contention = raw.get("contention", {})
    demand_raw = raw.get("demand_veh_h")
    if demand_raw is None:
        bad.append("missing section 'demand_veh_h'")
        demand_raw = {}

    demand: dict[tuple[str, str], float] = {}
    for origin, row in demand_raw.items():
        if not isinstance(row, dict):
            bad.append(f"demand_veh_h[{origin!r}] must map destination -> rate")
            continue
        for dest, rate in row.items():
            demand[(origin, dest)] = float(rate)

    weights = ctl.get("weights", {})
    cfg = ScenarioConfig(
        rows=int(net.get("rows", 0)),
        cols=int(net.get("cols", 0)),
        link_length=float(net.get("link_length_m", 0.0)),
        sat_flow=float(net.get("sat_flow_veh_h", 0.0)) / 3600.0,
        capacity_factor=float(net.get("capacity_factor", 1.1)),
        mode=ctl.get("mode", ""),
        gamma=float(ctl.get("gamma", 0.5)),
        cycle=float(ctl.get("cycle_s", 0.0)),
        g_min=float(ctl.get("g_min_s", 0.0)),
        g_bar=float(ctl.get("g_bar_s", 0.0)),
        x_bar=float(ctl.get("x_bar_veh", 0.0)),
        control_weight=float(weights.get("control_r", 0.0)),
        discount=float(weights.get("discount", -1.0)),
        all_red=float(ctl.get("all_red_s", 0.0)),
        pin_yellows=bool(ctl.get("pin_yellows", False)),
        yield_distance=float(contention.get("yield_distance_m", 15.0)),
        lookout_distance=float(contention.get("lookout_distance_m", 50.0)),
        demand=demand,
        duration=float(run.get("duration_s", 0.0)),
        seed=int(run.get("seed", 0)),
    )
    bad += _check(cfg)
    if bad:
        raise ConfigError(bad)
    return cfg


def load_config(path: str) -> ScenarioConfig:
    """Read, parse and fully validate a scenario JSON file."""
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"not valid JSON: {exc}"]) from exc
    return from_dict(raw)


def validate_config(cfg: ScenarioConfig) -> list[str]:
    """All invariant violations of an in-memory config (empty = valid)."""
    return _check(cfg)
