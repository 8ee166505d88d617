"""Directed link/junction network model and alternating one-way grids.

A network is a set of one-way links joined at two-stage junctions.  Every
junction serves exactly two incoming approaches, one per signal stage, so the
whole intersection plan is fixed by the pair order stored on the junction.

``build_grid`` constructs the benchmark family used throughout the package:
an r x c junction grid whose horizontal and vertical roads alternate
direction.  Neighbouring roads then enclose directed circuits; the circuit
whose cell sits closest to the centre of the network is tagged as the main
circuit and doubles as the central demand zone.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import networkx as nx

# A parked vehicle occupies its own length plus the standstill gap.
VEHICLE_FOOTPRINT_M = 7.0


@dataclass(frozen=True)
class Link:
    """One-way road segment.  Entry stubs have no upstream junction, exit
    stubs no downstream one; internal links have both."""

    id: str
    length: float                 # m
    sat_flow: float               # veh/s
    storage: int                  # max vehicles that fit bumper to bumper
    from_junction: str | None = None
    to_junction: str | None = None

    @property
    def is_entry(self) -> bool:
        return self.from_junction is None

    @property
    def is_exit(self) -> bool:
        return self.to_junction is None


@dataclass(frozen=True)
class Junction:
    """Two-stage signalised junction.

    ``incoming`` lists the approach served by the first stage before the one
    served by the second.  ``capacity`` is the discharge ceiling (veh/s) used
    by the contention terms of the flow model and ``friction`` the fraction
    of saturation flow that survives a contention (yellow) window.
    """

    id: str
    incoming: tuple[str, str]
    outgoing: tuple[str, ...]
    capacity: float               # veh/s
    friction: float               # dimensionless, in [0, 1]
    pos: tuple[float, float] = (0.0, 0.0)

    def stage_of(self, link_id: str) -> int:
        """0 for the first-stage approach, 1 for the second-stage one."""
        if link_id == self.incoming[0]:
            return 0
        if link_id == self.incoming[1]:
            return 1
        raise KeyError(f"{link_id} is not an approach of {self.id}")


class TurnRatioTable:
    """Fixed movement shares: ratio(a, b) of the vehicles leaving link a
    that continue onto link b."""

    def __init__(self, ratios: dict[tuple[str, str], float] | None = None):
        self._ratios: dict[tuple[str, str], float] = dict(ratios or {})

    def set(self, from_id: str, to_id: str, ratio: float) -> None:
        self._ratios[(from_id, to_id)] = ratio

    def ratio(self, from_id: str, to_id: str) -> float:
        return self._ratios.get((from_id, to_id), 0.0)

    def successors(self, from_id: str) -> list[tuple[str, float]]:
        """Downstream links of ``from_id`` with nonzero share, sorted by id."""
        out = [(b, r) for (a, b), r in self._ratios.items()
               if a == from_id and r > 0.0]
        out.sort()
        return out

    def items(self):
        return self._ratios.items()


@dataclass(frozen=True)
class Circuit:
    """Directed cycle of links enclosing a single grid cell."""

    links: tuple[str, ...]
    junctions: tuple[str, ...]
    orientation: str              # "clockwise" | "anticlockwise"
    kind: str                     # "main" | "secondary"


@dataclass
class NetworkModel:
    links: dict[str, Link]
    junctions: dict[str, Junction]
    turn_ratios: TurnRatioTable
    circuits: list[Circuit] = field(default_factory=list)
    zones: dict[str, tuple[str, ...]] = field(default_factory=dict)
    # Explicit orders make every vector, matrix and log reproducible.
    link_order: list[str] = field(default_factory=list)
    junction_order: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.link_order:
            self.link_order = sorted(self.links)
        if not self.junction_order:
            self.junction_order = sorted(self.junctions)

    @property
    def state_links(self) -> list[str]:
        """Links with a downstream junction, i.e. those carrying a signal
        queue.  Their order fixes the rows of every state vector."""
        return [lid for lid in self.link_order
                if self.links[lid].to_junction is not None]

    @property
    def entry_links(self) -> list[str]:
        return [lid for lid in self.link_order if self.links[lid].is_entry]

    @property
    def exit_links(self) -> list[str]:
        return [lid for lid in self.link_order if self.links[lid].is_exit]

    def state_index(self) -> dict[str, int]:
        return {lid: i for i, lid in enumerate(self.state_links)}


def _signed_area(points: list[tuple[float, float]]) -> float:
    """Shoelace area; positive when the polygon is walked anticlockwise."""
    area = 0.0
    n = len(points)
    for i in range(n):
        x0, y0 = points[i]
        x1, y1 = points[(i + 1) % n]
        area += x0 * y1 - x1 * y0
    return 0.5 * area


def find_circuits(net: NetworkModel) -> list[Circuit]:
    """Detect the directed single-cell circuits of a planar network.

    Enumerates elementary cycles of the junction graph and keeps those with
    the smallest enclosed area (larger cycles wrap several cells).  The
    circuit whose centre lies closest to the network centroid is the main
    one; orientation follows the sign of the enclosed area.
    """
    graph = nx.DiGraph()
    edge_link: dict[tuple[str, str], str] = {}
    for link in net.links.values():
        if link.from_junction is not None and link.to_junction is not None:
            graph.add_edge(link.from_junction, link.to_junction)
            edge_link[(link.from_junction, link.to_junction)] = link.id

    cycles = [c for c in nx.simple_cycles(graph) if len(c) >= 3]
    if not cycles:
        return []

    areas = [_signed_area([net.junctions[j].pos for j in c]) for c in cycles]
    unit = min(abs(a) for a in areas if abs(a) > 1e-9)
    kept = [(c, a) for c, a in zip(cycles, areas) if abs(a) < 1.5 * unit]

    all_pos = [j.pos for j in net.junctions.values()]
    centroid = (sum(p[0] for p in all_pos) / len(all_pos),
                sum(p[1] for p in all_pos) / len(all_pos))

    raw: list[tuple[float, tuple[str, ...], tuple[str, ...], str]] = []
    for junctions, area in kept:
        links = tuple(edge_link[(junctions[i], junctions[(i + 1) % len(junctions)])]
                      for i in range(len(junctions)))
        # Canonical rotation: start at the smallest link id.
        k = links.index(min(links))
        links = links[k:] + links[:k]
        junctions = tuple(junctions[k:] + junctions[:k])
        centre = (sum(net.junctions[j].pos[0] for j in junctions) / len(junctions),
                  sum(net.junctions[j].pos[1] for j in junctions) / len(junctions))
        dist = math.hypot(centre[0] - centroid[0], centre[1] - centroid[1])
        orientation = "anticlockwise" if area > 0 else "clockwise"
        raw.append((dist, links, junctions, orientation))

    raw.sort(key=lambda r: (r[0], r[1]))
    circuits = []
    for i, (_, links, junctions, orientation) in enumerate(raw):
        kind = "main" if i == 0 else "secondary"
        circuits.append(Circuit(links, junctions, orientation, kind))
    # Main circuit first, then secondaries in id order.
    circuits[1:] = sorted(circuits[1:], key=lambda c: c.links)
    return circuits


def _road_junctions(i_or_j: int, rows: int, cols: int, horizontal: bool) -> list[tuple[int, int]]:
    """Junction grid coordinates along one road, in travel order."""
    if horizontal:
        seq = [(i_or_j, j) for j in range(cols)]
        return seq if i_or_j % 2 == 0 else seq[::-1]   # even rows run east
    seq = [(i, i_or_j) for i in range(rows)]
    return seq[::-1] if i_or_j % 2 == 0 else seq       # even columns run north


def _entry_side(road: str, idx: int) -> tuple[str, str]:
    """(entry boundary, exit boundary) compass names for one road."""
    if road == "h":
        return ("west", "east") if idx % 2 == 0 else ("east", "west")
    return ("south", "north") if idx % 2 == 0 else ("north", "south")


def build_grid(rows: int, cols: int, link_length: float, sat_flow: float, *,
               friction: float = 0.5, capacity_factor: float = 1.1) -> NetworkModel:
    """Build an ``rows`` x ``cols`` alternating one-way junction grid.

    Every road is one-way: horizontal road i runs east when i is even, west
    otherwise, and vertical road j runs north when j is even, south
    otherwise.  Each road gets an entry stub, ``cols - 1`` (or ``rows - 1``)
    internal segments and an exit stub, all of ``link_length`` metres with
    saturation flow ``sat_flow`` (veh/s).  Turning shares split evenly over
    the two movements of every approach.
    """
    if rows < 2 or cols < 2:
        raise ValueError("grid needs at least 2 rows and 2 columns")
    if link_length <= 0 or sat_flow <= 0:
        raise ValueError("link_length and sat_flow must be positive")
    if not 0.0 <= friction <= 1.0:
        raise ValueError("friction must lie in [0, 1]")

    storage = int(link_length // VEHICLE_FOOTPRINT_M)
    jname = lambda i, j: f"J{i}_{j}"

    links: dict[str, Link] = {}
    link_order: list[str] = []
    incoming_at: dict[str, list[str]] = {jname(i, j): [] for i in range(rows) for j in range(cols)}
    outgoing_at: dict[str, list[str]] = {jname(i, j): [] for i in range(rows) for j in range(cols)}
    enters_from: dict[str, str] = {}   # approach link -> compass side it arrives from
    zone_sides: dict[str, list[str]] = {"north": [], "east": [], "south": [], "west": []}

    def add_link(lid: str, frm: str | None, to: str | None) -> None:
        links[lid] = Link(lid, link_length, sat_flow, storage, frm, to)
        link_order.append(lid)
        if frm is not None:
            outgoing_at[frm].append(lid)
        if to is not None:
            incoming_at[to].append(lid)

    def add_road(road: str, idx: int, horizontal: bool) -> None:
        names = [jname(i, j) for i, j in _road_junctions(idx, rows, cols, horizontal)]
        entry_side, exit_side = _entry_side(road, idx)
        prefix = f"{road}{idx}"
        add_link(f"{prefix}.in", None, names[0])
        enters_from[f"{prefix}.in"] = entry_side
        for k in range(len(names) - 1):
            add_link(f"{prefix}.{k}", names[k], names[k + 1])
            enters_from[f"{prefix}.{k}"] = entry_side
        add_link(f"{prefix}.out", names[-1], None)
        zone_sides[entry_side].append(f"{prefix}.in")
        zone_sides[exit_side].append(f"{prefix}.out")

    for i in range(rows):
        add_road("h", i, horizontal=True)
    for j in range(cols):
        add_road("v", j, horizontal=False)

    # First stage goes to the approach arriving from the earliest compass
    # point in (west, north, east, south).
    stage_rank = {"west": 0, "north": 1, "east": 2, "south": 3}
    junctions: dict[str, Junction] = {}
    junction_order: list[str] = []
    ratios = TurnRatioTable()
    for i in range(rows):
        for j in range(cols):
            name = jname(i, j)
            inc = sorted(incoming_at[name], key=lambda lid: stage_rank[enters_from[lid]])
            if len(inc) != 2:
                raise ValueError(f"junction {name} has {len(inc)} approaches")
            out = tuple(sorted(outgoing_at[name]))
            cap = capacity_factor * max(links[l].sat_flow for l in inc)
            junctions[name] = Junction(name, (inc[0], inc[1]), out, cap, friction,
                                       pos=(j * link_length, (rows - 1 - i) * link_length))
            junction_order.append(name)
            for a in inc:
                for b in out:
                    ratios.set(a, b, 1.0 / len(out))

    net = NetworkModel(links, junctions, ratios,
                       link_order=link_order, junction_order=junction_order)
    net.circuits = find_circuits(net)

    zones: dict[str, tuple[str, ...]] = {
        side: tuple(sorted(lids)) for side, lids in zone_sides.items()
    }
    if net.circuits:
        # The central zone is the ring of streets around the middle cell:
        # demand to and from the centre enters and leaves on the main
        # circuit's own links.
        main = next(c for c in net.circuits if c.kind == "main")
        zones["central"] = tuple(sorted(main.links))
    net.zones = zones
    return net


def validate(net: NetworkModel) -> list[str]:
    """Check structural invariants; returns all violations, not just the
    first."""
    bad: list[str] = []

    for lid, link in net.links.items():
        if link.length <= 0:
            bad.append(f"link {lid}: nonpositive length")
        if link.sat_flow <= 0:
            bad.append(f"link {lid}: nonpositive sat_flow")
        if link.storage < 1:
            bad.append(f"link {lid}: storage < 1")
        if link.from_junction is not None and link.from_junction not in net.junctions:
            bad.append(f"link {lid}: unknown from_junction {link.from_junction}")
        if link.to_junction is not None and link.to_junction not in net.junctions:
            bad.append(f"link {lid}: unknown to_junction {link.to_junction}")
        if link.from_junction is None and link.to_junction is None:
            bad.append(f"link {lid}: detached from every junction")

    for jid, junc in net.junctions.items():
        if len(junc.incoming) != 2:
            bad.append(f"junction {jid}: needs exactly 2 approaches")
        for lid in junc.incoming:
            if lid not in net.links:
                bad.append(f"junction {jid}: unknown approach {lid}")
            elif net.links[lid].to_junction != jid:
                bad.append(f"junction {jid}: approach {lid} does not end there")
        for lid in junc.outgoing:
            if lid not in net.links:
                bad.append(f"junction {jid}: unknown outgoing link {lid}")
            elif net.links[lid].from_junction != jid:
                bad.append(f"junction {jid}: outgoing link {lid} does not start there")
        if not 0.0 <= junc.friction <= 1.0:
            bad.append(f"junction {jid}: friction outside [0, 1]")
        sats = [net.links[l].sat_flow for l in junc.incoming if l in net.links]
        if sats and junc.capacity < max(sats):
            bad.append(f"junction {jid}: capacity below an approach sat_flow")

    shares: dict[str, float] = {}
    for (a, b), r in net.turn_ratios.items():
        if not 0.0 <= r <= 1.0:
            bad.append(f"turn ratio {a}->{b}: outside [0, 1]")
        if a not in net.links or b not in net.links:
            bad.append(f"turn ratio {a}->{b}: unknown link")
            continue
        if net.links[a].to_junction is None or net.links[a].to_junction != net.links[b].from_junction:
            bad.append(f"turn ratio {a}->{b}: links do not meet at a junction")
        shares[a] = shares.get(a, 0.0) + r
    for a, total in shares.items():
        if total > 1.0 + 1e-9:
            bad.append(f"turn ratios out of {a}: sum {total:.6f} exceeds 1")

    seen: dict[str, str] = {}
    for zone, lids in net.zones.items():
        for lid in lids:
            if lid not in net.links:
                bad.append(f"zone {zone}: unknown link {lid}")
            if lid in seen:
                bad.append(f"zones {seen[lid]} and {zone} overlap on {lid}")
            seen[lid] = zone

    for circuit in net.circuits:
        for k, lid in enumerate(circuit.links):
            nxt = circuit.links[(k + 1) % len(circuit.links)]
            if lid not in net.links or nxt not in net.links:
                bad.append(f"circuit {circuit.links}: unknown link")
                break
            if net.links[lid].to_junction != net.links[nxt].from_junction:
                bad.append(f"circuit {circuit.links}: {lid} -> {nxt} is not connected")

    return bad


def write_network_csv(net: NetworkModel, nodes_path: str, edges_path: str) -> None:
    """Dump the junction and link tables for external inspection."""
    with open(nodes_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["junction_id", "x_m", "y_m", "first_stage_approach",
                    "second_stage_approach", "capacity_veh_s", "friction"])
        for jid in net.junction_order:
            j = net.junctions[jid]
            w.writerow([jid, f"{j.pos[0]:.3f}", f"{j.pos[1]:.3f}",
                        j.incoming[0], j.incoming[1],
                        f"{j.capacity:.6f}", f"{j.friction:.6f}"])
    with open(edges_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["link_id", "from_junction", "to_junction", "length_m",
                    "sat_flow_veh_s", "storage_veh", "kind"])
        for lid in net.link_order:
            l = net.links[lid]
            kind = "entry" if l.is_entry else "exit" if l.is_exit else "internal"
            w.writerow([lid, l.from_junction or "", l.to_junction or "",
                        f"{l.length:.3f}", f"{l.sat_flow:.6f}", l.storage, kind])
