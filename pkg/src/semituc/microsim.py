"""Microscopic fixed-step traffic simulator for the signal-controlled grids.

Vehicles follow precomputed shortest routes link by link under a bounded
acceleration / safe-gap car-following rule.  Signal schedules gate the stop
lines: green passes, red stops, and yellow activates the contention rule --
the first vehicle of a yellow approach yields to the antagonist green
approach only when it is within ``yield_distance`` of the junction while the
green's first vehicle is within ``lookout_distance``; otherwise it rolls
through.

The simulator is deliberately independent of the per-cycle flow model: it
moves individual vehicles with its own kinematics, so model-vs-plant
mismatch (saturation flows, turning behavior, friction) is an outcome, not
an input.  Everything is deterministic for a fixed seed.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .controller import SignalSchedule
from .network import NetworkModel, VEHICLE_FOOTPRINT_M


class UnreachableError(ValueError):
    """No route exists between the requested links."""


@dataclass(frozen=True)
class SimParams:
    """Kinematic constants of the car-following rule."""

    v_free: float = 13.9          # m/s
    accel: float = 2.0            # m/s^2
    decel: float = 4.5            # m/s^2, comfortable braking
    veh_length: float = 5.0       # m
    min_gap: float = 2.0          # m at standstill
    dt: float = 0.5               # s, fixed step

    def __post_init__(self) -> None:
        if min(self.v_free, self.accel, self.decel, self.veh_length, self.dt) <= 0:
            raise ValueError("kinematic constants must be positive")
        if self.min_gap < 0:
            raise ValueError("min_gap must be nonnegative")


@dataclass(frozen=True)
class ContentionParams:
    """Distances of the yellow-approach priority rule."""

    yield_distance: float = 15.0    # a yellow first vehicle closer than this yields
    lookout_distance: float = 50.0  # when the green first vehicle is within this

    def __post_init__(self) -> None:
        if not 0 < self.yield_distance < self.lookout_distance:
            raise ValueError("need 0 < yield_distance < lookout_distance")


@dataclass(frozen=True)
class DemandTable:
    """Origin/destination demand rates between zones, in veh/h."""

    rates: dict[tuple[str, str], float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for (o, d), rate in self.rates.items():
            if rate < 0:
                raise ValueError(f"negative demand rate for {o}->{d}")
        if self.rates.get(("central", "central"), 0.0) != 0.0:
            raise ValueError("central->central demand must be zero")

    def total(self) -> float:
        return sum(self.rates.values())


def safe_stop_speed(gap: float, decel: float, dt: float) -> float:
    """Largest speed from which ``gap`` meters still suffice to stop.

    Solves v*dt + v^2/(2b) = gap for v, so a vehicle at this speed never
    crosses the barrier and converges onto it over successive steps.
    """
    if gap <= 0.0:
        return 0.0
    bdt = decel * dt
    return -bdt + math.sqrt(bdt * bdt + 2.0 * decel * gap)


def contention_command(d_yellow: float, d_green: float,
                       params: ContentionParams) -> bool:
    """True when the yellow approach's first vehicle must stop: it is
    within yield_distance of the line while the green approach's first
    vehicle is within lookout_distance of it."""
    return d_yellow < params.yield_distance and d_green < params.lookout_distance


def route(net: NetworkModel, origin: str, dest: str) -> list[str]:
    """Shortest route by link count from ``origin`` to ``dest``.

    Breadth-first over the movement graph (turn ratios > 0), expanding
    successors in link-id order so ties resolve toward smaller ids.
    """
    if origin == dest:
        return [origin]
    parent: dict[str, str] = {origin: origin}
    frontier = deque([origin])
    while frontier:
        cur = frontier.popleft()
        for nxt, _ in net.turn_ratios.successors(cur):
            if nxt in parent:
                continue
            parent[nxt] = cur
            if nxt == dest:
                path = [dest]
                while path[-1] != origin:
                    path.append(parent[path[-1]])
                return path[::-1]
            frontier.append(nxt)
    raise UnreachableError(f"no route from {origin} to {dest}")


def _zone_origins(net: NetworkModel, zone: str) -> list[str]:
    return [l for l in net.zones[zone] if not net.links[l].is_exit]


def _zone_destinations(net: NetworkModel, zone: str) -> list[str]:
    return [l for l in net.zones[zone] if not net.links[l].is_entry]


@dataclass(frozen=True)
class OdStream:
    """One concrete origin-link to destination-link Poisson stream."""

    origin: str
    dest: str
    rate: float                   # veh/h
    route: tuple[str, ...]


def expand_demand(net: NetworkModel, table: DemandTable) -> list[OdStream]:
    """Expand zone-to-zone rates into concrete link-to-link streams.

    Each zone pair's rate splits uniformly over the feasible (origin link,
    destination link) combinations of the two zones; entry stubs source and
    exit stubs sink, while the central zone's internal links do both.
    """
    streams: list[OdStream] = []
    for (zo, zd), rate in sorted(table.rates.items()):
        if rate <= 0.0:
            continue
        if zo not in net.zones or zd not in net.zones:
            raise KeyError(f"unknown zone in demand pair {zo}->{zd}")
        origins = _zone_origins(net, zo)
        dests = _zone_destinations(net, zd)
        combos = [(o, d) for o in origins for d in dests if o != d]
        if not combos:
            raise ValueError(f"no feasible link pair for demand {zo}->{zd}")
        share = rate / len(combos)
        for o, d in combos:
            streams.append(OdStream(o, d, share, tuple(route(net, o, d))))
    return streams


class Vehicle:
    """Mutable per-vehicle record; positions are meters from link start."""

    __slots__ = ("vid", "route", "leg", "pos", "speed", "entered_at", "stamp")

    def __init__(self, vid: int, route_idx: tuple[int, ...], entered_at: float):
        self.vid = vid
        self.route = route_idx
        self.leg = 0
        self.pos = 0.0
        self.speed = 0.0
        self.entered_at = entered_at
        self.stamp = -1


class _Lights:
    """Compiled per-junction schedule breakpoints plus approach wiring."""

    __slots__ = ("green", "y1_end", "y2_start", "first_idx", "second_idx",
                 "jid", "active")

    def __init__(self, jid: str, first_idx: int, second_idx: int):
        self.jid = jid
        self.first_idx = first_idx
        self.second_idx = second_idx
        self.active = False        # all approaches pass until a schedule arrives
        self.green = 0.0
        self.y1_end = 0.0
        self.y2_start = 0.0

    def set(self, schedule: SignalSchedule) -> None:
        self.active = True
        self.green = schedule.green
        self.y1_end = schedule.green + schedule.yellow_first
        self.y2_start = schedule.green - schedule.yellow_second

    def color(self, stage: int, t: float) -> str:
        if not self.active:
            return "G"
        if stage == 0:
            if t < self.green:
                return "G"
            return "Y" if t < self.y1_end else "R"
        if t >= self.green:
            return "G"
        return "Y" if t >= self.y2_start else "R"


class Simulation:
    """Single-run simulator state: network, schedules, vehicles, metrics."""

    def __init__(self, net: NetworkModel, demand: DemandTable, *,
                 params: SimParams = SimParams(),
                 contention: ContentionParams = ContentionParams(),
                 cycle: float = 60.0, seed: int = 0,
                 record_crossings: bool = False):
        self.net = net
        self.params = params
        self.contention = contention
        self.cycle = cycle
        self.rng = np.random.default_rng(seed)
        self.record_crossings = record_crossings

        self._ids = list(net.link_order)
        self._index = {lid: i for i, lid in enumerate(self._ids)}
        self._length = [net.links[lid].length for lid in self._ids]
        self.on: list[list[Vehicle]] = [[] for _ in self._ids]

        # Stop-line wiring: per link the junction lights and its stage.
        self._lights: dict[str, _Lights] = {}
        self._line: list[tuple[_Lights, int] | None] = [None] * len(self._ids)
        for jid in net.junction_order:
            junc = net.junctions[jid]
            lt = _Lights(jid, self._index[junc.incoming[0]], self._index[junc.incoming[1]])
            self._lights[jid] = lt
            self._line[lt.first_idx] = (lt, 0)
            self._line[lt.second_idx] = (lt, 1)
        self._lights_list = [self._lights[jid] for jid in net.junction_order]

        # Demand streams and entry queues.
        self.streams = expand_demand(net, demand)
        self._routes = [tuple(self._index[l] for l in s.route) for s in self.streams]
        self._lam_dt = np.array([s.rate / 3600.0 * params.dt for s in self.streams])
        self.queues: dict[int, deque[Vehicle]] = {}
        for s in self.streams:
            self.queues.setdefault(self._index[s.origin], deque())
        self._spawn_links = sorted(self.queues)

        self._step_idx = 0
        self._steps_per_cycle = max(1, round(cycle / params.dt))
        self.spawned = 0
        self.ended = 0
        self.tt_sum = 0.0
        self.trips: list[tuple[int, str, str, float, float, float]] = []
        self.crossings: list[tuple[str, str, float, str]] = []

        # Streaming safety audit counters.
        self.red_crossings = 0
        self.cooccupancy_events = 0
        self._last_cross: dict[str, tuple[float, int, str]] = {}

    # -- schedule plumbing ------------------------------------------------

    def apply_schedule(self, junction_id: str, schedule: SignalSchedule) -> None:
        """Install a junction's schedule for the coming cycle(s)."""
        if schedule.cycle != self.cycle:
            raise ValueError(f"schedule cycle {schedule.cycle} != simulator cycle {self.cycle}")
        self._lights[junction_id].set(schedule)

    def cycle_time(self) -> float:
        """Time since the start of the current cycle."""
        return (self._step_idx % self._steps_per_cycle) * self.params.dt

    def stopline_state(self, link_id: str, t: float | None = None) -> str:
        """pass / yield / stop shown to a link's stop line at cycle time t."""
        entry = self._line[self._index[link_id]]
        if entry is None:
            return "pass"
        lights, stage = entry
        color = lights.color(stage, self.cycle_time() if t is None else t)
        return {"G": "pass", "Y": "yield", "R": "stop"}[color]

    # -- vehicle plumbing --------------------------------------------------

    def place_vehicle(self, link_id: str, pos: float, *,
                      route_ids: list[str] | None = None, speed: float = 0.0,
                      entered_at: float | None = None) -> Vehicle:
        """Insert a vehicle directly (fixtures and tests)."""
        li = self._index[link_id]
        if route_ids is None:
            route_ids = [link_id]
        idx_route = tuple(self._index[l] for l in route_ids)
        v = Vehicle(self.spawned, idx_route, self.clock if entered_at is None else entered_at)
        v.leg = idx_route.index(li)
        v.pos = pos
        v.speed = speed
        self.spawned += 1
        lst = self.on[li]
        at = 0
        while at < len(lst) and lst[at].pos > pos:
            at += 1
        lst.insert(at, v)
        return v

    @property
    def clock(self) -> float:
        return self._step_idx * self.params.dt

    @property
    def running(self) -> int:
        return sum(len(lst) for lst in self.on)

    @property
    def queued(self) -> int:
        return sum(len(q) for q in self.queues.values())

    @property
    def mean_travel_time(self) -> float:
        return self.tt_sum / self.ended if self.ended else float("nan")

    def measure_state(self) -> np.ndarray:
        """Vehicle counts per state link, in net.state_links order."""
        return np.array([len(self.on[self._index[lid]])
                         for lid in self.net.state_links], dtype=float)

    # -- audits ------------------------------------------------------------

    def audit_conservation(self) -> bool:
        return self.spawned == self.running + self.ended + self.queued

    def audit_overlaps(self) -> int:
        """Number of leader/follower pairs currently overlapping."""
        bad = 0
        length = self.params.veh_length
        for lst in self.on:
            for lead, follow in zip(lst, lst[1:]):
                if lead.pos - follow.pos < length - 1e-9:
                    bad += 1
        return bad

    # -- core loop -----------------------------------------------------------

    def run(self, seconds: float) -> None:
        n = round(seconds / self.params.dt)
        for _ in range(n):
            self.step()

    def step(self) -> None:
        p = self.params
        dt = p.dt
        v_free = p.v_free
        a_dt = p.accel * dt
        decel = p.decel
        bdt = decel * dt
        bdt2 = bdt * bdt
        two_b = 2.0 * decel
        footprint = p.veh_length + p.min_gap
        # Gaps beyond this never constrain the next step.
        far = v_free * dt + v_free * v_free / two_b + 1.0

        stamp = self._step_idx
        now = stamp * dt
        t = (stamp % self._steps_per_cycle) * dt
        on = self.on
        lengths = self._length

        # 1. Spawn Poisson arrivals into entry queues.
        if len(self._lam_dt):
            counts = self.rng.poisson(self._lam_dt)
            for si in np.nonzero(counts)[0]:
                q = self.queues[self._routes[si][0]]
                for _ in range(counts[si]):
                    q.append(Vehicle(self.spawned, self._routes[si], now))
                    self.spawned += 1

        # 2. Insert queued vehicles where the link start is free.
        for li in self._spawn_links:
            q = self.queues[li]
            if not q:
                continue
            lst = on[li]
            if lst:
                room = lst[-1].pos - footprint
                if room < 0.0:
                    continue
                speed = safe_stop_speed(room, decel, dt)
                if speed > v_free:
                    speed = v_free
            else:
                speed = v_free
            v = q.popleft()
            v.stamp = stamp
            v.speed = speed
            lst.append(v)

        # 3. Contention holds: one decision per junction inside a window.
        held: set[int] = set()
        m_dist = self.contention.yield_distance
        big_m = self.contention.lookout_distance
        for lt in self._lights_list:
            if lt.green <= t < lt.y1_end:
                yellow_idx, green_idx = lt.first_idx, lt.second_idx
            elif lt.y2_start <= t < lt.green:
                yellow_idx, green_idx = lt.second_idx, lt.first_idx
            else:
                continue
            ly, lg = on[yellow_idx], on[green_idx]
            if ly and lg:
                d_y = lengths[yellow_idx] - ly[0].pos
                d_g = lengths[green_idx] - lg[0].pos
                if d_y < m_dist and d_g < big_m:
                    held.add(yellow_idx)

        # 4. Move vehicles, per link, front to back.
        for li in range(len(on)):
            vehs = on[li]
            if not vehs:
                continue
            length = lengths[li]
            j = 0
            while j < len(vehs):
                v = vehs[j]
                if v.stamp == stamp:
                    j += 1
                    continue
                v.stamp = stamp
                sp = v.speed + a_dt
                if sp > v_free:
                    sp = v_free

                if j > 0:
                    # Follower: keep a safe gap to the (already moved) leader.
                    head = vehs[j - 1].pos - footprint
                    h = head - v.pos
                    if h < far:
                        if h <= 0.0:
                            sp = 0.0
                        else:
                            vs = -bdt + math.sqrt(bdt2 + two_b * h)
                            if vs < sp:
                                sp = vs
                    npos = v.pos + sp * dt
                    if npos > head and head >= v.pos:
                        npos = head
                    v.speed = sp
                    v.pos = npos
                    j += 1
                    continue

                # Front vehicle.
                if v.leg == len(v.route) - 1:
                    # Destination link: run to its end and finish there.
                    npos = v.pos + sp * dt
                    if npos >= length:
                        vehs.pop(0)
                        self.ended += 1
                        tt = now + dt - v.entered_at
                        self.tt_sum += tt
                        self.trips.append((v.vid, self._ids[v.route[0]],
                                           self._ids[v.route[-1]], v.entered_at,
                                           now + dt, tt))
                        continue
                    v.speed = sp
                    v.pos = npos
                    j += 1
                    continue

                entry = self._line[li]
                color = "G" if entry is None else entry[0].color(entry[1], t)
                blocked = color == "R" or li in held
                room = float("inf")
                if not blocked:
                    nlist = on[v.route[v.leg + 1]]
                    if nlist:
                        room = nlist[-1].pos - footprint
                        if room < 0.0:
                            blocked = True

                if blocked:
                    h = length - v.pos
                    if h < far:
                        if h <= 0.0:
                            sp = 0.0
                        else:
                            vs = -bdt + math.sqrt(bdt2 + two_b * h)
                            if vs < sp:
                                sp = vs
                    npos = v.pos + sp * dt
                    if npos > length:
                        npos = length
                    v.speed = sp
                    v.pos = npos
                    j += 1
                    continue

                npos = v.pos + sp * dt
                if npos < length:
                    v.speed = sp
                    v.pos = npos
                    j += 1
                    continue

                # Crossing: enter the next route link, clipped to its room.
                over = npos - length
                if over > room:
                    over = room
                moved = (length - v.pos) + over
                vehs.pop(0)
                v.leg += 1
                v.pos = over
                v.speed = moved / dt
                on[v.route[v.leg]].append(v)
                if entry is not None:
                    self._audit_crossing(entry[0], li, now, color)

        self._step_idx += 1

    def _audit_crossing(self, lights: _Lights, link_idx: int, now: float,
                        color: str) -> None:
        if color == "R":
            self.red_crossings += 1
        last = self._last_cross.get(lights.jid)
        if last is not None:
            t_last, idx_last, color_last = last
            if idx_last != link_idx and now - t_last <= 1.0 and "R" in (color, color_last):
                self.cooccupancy_events += 1
        self._last_cross[lights.jid] = (now, link_idx, color)
        if self.record_crossings:
            self.crossings.append((lights.jid, self._ids[link_idx], now, color))
