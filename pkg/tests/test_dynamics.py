"""Per-cycle flow equations, state update and control-matrix assembly."""

import csv

import numpy as np
import pytest

from semituc.dynamics import (
    ControlPlan,
    InfeasibleControls,
    JunctionControls,
    classical_b_matrix,
    dependent_controls,
    extended_b_matrix,
    flow_between,
    outflow,
    predict_state,
)
from semituc.network import Junction, Link, NetworkModel, TurnRatioTable, build_grid


def two_junction_net(*, s3=0.5, ratio_31=0.0, friction_a=0.3, friction_b=0.5):
    """Two junctions in series: l2 (first stage) and l3 feed A; A sends half
    of l2 onto l1, which is the first stage of B.  Mirrors the textbook
    two-stage layout the worked flow numbers come from."""
    links = {
        "l1": Link("l1", 300.0, 0.5, 42, "A", "B"),
        "l2": Link("l2", 300.0, 0.5, 42, None, "A"),
        "l3": Link("l3", 300.0, s3, 42, None, "A"),
        "l4": Link("l4", 300.0, 0.5, 42, "A", None),
        "l5": Link("l5", 300.0, 0.5, 42, None, "B"),
        "l6": Link("l6", 300.0, 0.5, 42, "B", None),
    }
    ratios = TurnRatioTable({
        ("l2", "l1"): 0.5, ("l2", "l4"): 0.5,
        ("l3", "l1"): ratio_31, ("l3", "l4"): 1.0 - ratio_31,
        ("l1", "l6"): 1.0, ("l5", "l6"): 1.0,
    })
    junctions = {
        "A": Junction("A", ("l2", "l3"), ("l1", "l4"), 0.55, friction_a),
        "B": Junction("B", ("l1", "l5"), ("l6",), 0.55, friction_b),
    }
    return NetworkModel(links, junctions, ratios,
                        junction_order=["A", "B"])


class TestDependentControls:
    def test_worked_example(self):
        t = dependent_controls(JunctionControls(40.0, 10.0, 20.0), 60.0)
        assert t.red_first == 10.0
        assert t.red_second == 20.0
        assert t.green_second == 20.0

    def test_zero_yellows_reduce_to_classical_split(self):
        t = dependent_controls(JunctionControls(30.0, 0.0, 0.0), 60.0)
        assert (t.red_first, t.red_second, t.green_second) == (30.0, 30.0, 30.0)

    def test_infeasible_first_stage_yellow(self):
        with pytest.raises(InfeasibleControls):
            dependent_controls(JunctionControls(30.0, 35.0, 0.0), 60.0)

    def test_other_infeasible_inputs(self):
        with pytest.raises(InfeasibleControls):
            dependent_controls(JunctionControls(30.0, 0.0, 35.0), 60.0)  # r2 < 0
        with pytest.raises(InfeasibleControls):
            dependent_controls(JunctionControls(30.0, -1.0, 0.0), 60.0)
        with pytest.raises(InfeasibleControls):
            dependent_controls(JunctionControls(70.0, 0.0, 0.0), 60.0)
        with pytest.raises(InfeasibleControls):
            dependent_controls(JunctionControls(30.0, 0.0, 0.0), 0.0)

    def test_durations_tile_the_cycle(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            c = rng.uniform(30.0, 120.0)
            g = rng.uniform(0.0, c)
            y1 = rng.uniform(0.0, c - g)
            y2 = rng.uniform(0.0, g)
            t = dependent_controls(JunctionControls(g, y1, y2), c)
            assert g + y1 + t.red_first == pytest.approx(c, abs=1e-12)
            assert t.green_second + y2 + t.red_second == pytest.approx(c, abs=1e-12)


class TestFlows:
    def test_classical_green_only(self):
        net = two_junction_net()
        q = flow_between(net, "l2", "l1", JunctionControls(30.0, 0.0, 0.0), 60.0)
        assert q == pytest.approx(7.5, abs=1e-12)  # alpha * s * g

    def test_antagonist_yellow_at_friction_rate(self):
        net = two_junction_net()
        # The second stage's yellow eats into l2's green but lets it keep
        # discharging at friction rate: 0.5*0.5*20 + 0.3*0.5*0.5*10.
        q = flow_between(net, "l2", "l1", JunctionControls(30.0, 0.0, 10.0), 60.0)
        assert q == pytest.approx(5.75, abs=1e-12)

    def test_own_yellow_taps_spare_capacity(self):
        net = two_junction_net()
        # 0.5*0.5*30 + 0.3*(0.55-0.5)*10; the spare-capacity term is not
        # scaled by the turn ratio.
        q = flow_between(net, "l2", "l1", JunctionControls(30.0, 10.0, 0.0), 60.0)
        assert q == pytest.approx(7.65, abs=1e-12)

    def test_outflow_classical(self):
        net = two_junction_net()
        q = outflow(net, "l1", JunctionControls(30.0, 0.0, 0.0), 60.0)
        assert q == pytest.approx(15.0, abs=1e-12)  # s * g

    def test_outflow_with_antagonist_yellow(self):
        net = two_junction_net(friction_b=0.5)
        # 0.5*(30-10) + 0.5*0.5*10 = 12.5 for the first stage of B.
        q = outflow(net, "l1", JunctionControls(30.0, 0.0, 10.0), 60.0)
        assert q == pytest.approx(12.5, abs=1e-12)

    def test_unit_friction_and_tight_capacity_is_classical(self):
        # gamma = 1 with q_max = s_other makes every yellow term vanish.
        net = build_grid(2, 2, 300.0, 0.5, friction=1.0, capacity_factor=1.0)
        rng = np.random.default_rng(3)
        for _ in range(50):
            g = rng.uniform(10.0, 50.0)
            y1 = rng.uniform(0.0, 60.0 - g)
            y2 = rng.uniform(0.0, g)
            for lid in net.state_links[:4]:
                with_y = outflow(net, lid, JunctionControls(g, y1, y2), 60.0)
                stage = net.junctions[net.links[lid].to_junction].stage_of(lid)
                g_own = g if stage == 0 else 60.0 - g
                assert with_y == pytest.approx(0.5 * g_own, abs=1e-12)

    def test_capacity_below_antagonist_is_rejected(self):
        net = two_junction_net(s3=0.7)  # q_max 0.55 < s3 0.7
        with pytest.raises(ValueError):
            flow_between(net, "l2", "l1", JunctionControls(30.0, 0.0, 0.0), 60.0)

    def test_infeasible_controls_propagate(self):
        net = two_junction_net()
        with pytest.raises(InfeasibleControls):
            flow_between(net, "l2", "l1", JunctionControls(30.0, 35.0, 0.0), 60.0)

    def test_flow_requires_adjacency(self):
        net = two_junction_net()
        with pytest.raises(ValueError):
            flow_between(net, "l2", "l6", JunctionControls(30.0, 0.0, 0.0), 60.0)
        with pytest.raises(ValueError):
            outflow(net, "l4", JunctionControls(30.0, 0.0, 0.0), 60.0)

    def test_monotonicity(self):
        net = two_junction_net()
        rng = np.random.default_rng(11)
        for _ in range(100):
            g = rng.uniform(5.0, 40.0)
            y1 = rng.uniform(0.0, 10.0)
            y2 = rng.uniform(0.0, 5.0)
            base = flow_between(net, "l2", "l1", JunctionControls(g, y1, y2), 60.0)
            more_g = flow_between(net, "l2", "l1", JunctionControls(g + 1.0, y1, y2), 60.0)
            assert more_g >= base - 1e-12
            # gamma * (q_max - s_other) >= 0 here, so own yellow helps too.
            more_y = flow_between(net, "l2", "l1", JunctionControls(g, y1 + 1.0, y2), 60.0)
            assert more_y >= base - 1e-12


class TestPredictState:
    def test_empty_network_zero_demand_stays_empty(self):
        # No representable control zeroes both stages (their greens tile the
        # cycle), so the do-nothing identity is the empty network.
        net = two_junction_net()
        n = len(net.state_links)
        for g in (0.0, 30.0, 60.0):
            plan = ControlPlan.uniform(2, g, 0.0, 0.0, 60.0)
            nxt, _ = predict_state(net, np.zeros(n), plan, np.zeros(n))
            assert np.array_equal(nxt, np.zeros(n))

    def test_worked_composition(self):
        net = two_junction_net()
        # A: g=30 with a 10 s second-stage yellow feeds l1 exactly 5.75 veh;
        # B: g=15, no yellows, discharges l1 at 0.5*15 = 7.5 veh.
        plan = ControlPlan(np.array([30.0, 15.0]), np.zeros(2),
                           np.array([10.0, 0.0]), 60.0)
        x = np.zeros(4)
        d = np.zeros(4)
        i1 = net.state_index()["l1"]
        x[i1] = 10.0
        d[i1] = 2.0
        nxt, _ = predict_state(net, x, plan, d)
        assert nxt[i1] == pytest.approx(10.25, abs=1e-12)

    def test_clamps_at_storage_and_zero(self):
        net = two_junction_net()
        idx = net.state_index()
        plan = ControlPlan(np.array([30.0, 0.0]), np.zeros(2), np.zeros(2), 60.0)
        x = np.zeros(4)
        x[idx["l1"]] = 42.0   # full link, gets 7.5 in and nothing out
        x[idx["l2"]] = 0.0    # empty link discharging
        nxt, clamped = predict_state(net, x, plan, np.zeros(4))
        assert nxt[idx["l1"]] == 42.0 and clamped[idx["l1"]]
        assert nxt[idx["l2"]] == 0.0 and clamped[idx["l2"]]
        raw, flags = predict_state(net, x, plan, np.zeros(4), clamp=False)
        assert raw[idx["l1"]] == pytest.approx(49.5)
        assert raw[idx["l2"]] == pytest.approx(-15.0)
        assert not flags.any()

    def test_shape_mismatch_rejected(self):
        net = two_junction_net()
        plan = ControlPlan.uniform(2, 30.0, 0.0, 0.0, 60.0)
        with pytest.raises(ValueError):
            predict_state(net, np.zeros(3), plan, np.zeros(4))

    def test_total_count_identity(self):
        """The summed update equals the independently summed flow terms."""
        net = build_grid(2, 2, 300.0, 0.5)
        order = net.state_links
        rng = np.random.default_rng(19)
        for _ in range(20):
            greens = rng.uniform(10.0, 50.0, 4)
            y1 = rng.uniform(0.0, 60.0 - greens)
            y2 = rng.uniform(0.0, greens)
            plan = ControlPlan(greens, y1, y2, 60.0)
            x = rng.uniform(5.0, 20.0, len(order))
            d = rng.uniform(0.0, 3.0, len(order))
            nxt, _ = predict_state(net, x, plan, d, clamp=False)

            jidx = {jid: i for i, jid in enumerate(net.junction_order)}
            total_out = 0.0
            total_in = 0.0
            for lid in order:
                ctl = plan.at(jidx[net.links[lid].to_junction])
                total_out += outflow(net, lid, ctl, 60.0)
                up = net.links[lid].from_junction
                if up is not None:
                    up_ctl = plan.at(jidx[up])
                    for approach in net.junctions[up].incoming:
                        if net.turn_ratios.ratio(approach, lid) > 0.0:
                            total_in += flow_between(net, approach, lid, up_ctl, 60.0)
            assert nxt.sum() - x.sum() == pytest.approx(
                d.sum() + total_in - total_out, abs=1e-9)

    def test_classical_conservation_with_boundary_leakage(self):
        """With zero yellows, what leaves the tracked state is exactly the
        flow routed onto exit links."""
        net = build_grid(2, 2, 300.0, 0.5)
        order = net.state_links
        rng = np.random.default_rng(23)
        jidx = {jid: i for i, jid in enumerate(net.junction_order)}
        for _ in range(20):
            plan = ControlPlan(rng.uniform(10.0, 50.0, 4),
                               np.zeros(4), np.zeros(4), 60.0)
            x = rng.uniform(5.0, 20.0, len(order))
            d = rng.uniform(0.0, 3.0, len(order))
            nxt, _ = predict_state(net, x, plan, d, clamp=False)
            leak = 0.0
            for lid in net.exit_links:
                up = net.links[lid].from_junction
                up_ctl = plan.at(jidx[up])
                for approach in net.junctions[up].incoming:
                    if net.turn_ratios.ratio(approach, lid) > 0.0:
                        leak += flow_between(net, approach, lid, up_ctl, 60.0)
            assert nxt.sum() - x.sum() == pytest.approx(d.sum() - leak, abs=1e-9)


class TestControlMatrices:
    def test_classical_column_entry(self):
        # d(x_l1)/d(g_A) = a21*s2 - a31*s3 once g of the second stage is
        # substituted as c - g.
        net = two_junction_net(s3=0.6, ratio_31=0.4)
        b = classical_b_matrix(net)
        row = b.link_ids.index("l1")
        col = b.control_ids.index("A.g")
        assert b.values[row, col] == pytest.approx(0.5 * 0.5 - 0.4 * 0.6, abs=1e-12)

    def test_symmetric_junction_cancels(self):
        net = two_junction_net(s3=0.5, ratio_31=0.5)
        b = classical_b_matrix(net)
        row = b.link_ids.index("l1")
        col = b.control_ids.index("A.g")
        assert b.values[row, col] == 0.0

    def test_grid_shapes(self):
        net = build_grid(4, 4, 300.0, 0.5)
        assert classical_b_matrix(net).values.shape == (32, 16)
        assert extended_b_matrix(net).values.shape == (32, 48)

    def test_green_columns_shared_exactly(self):
        net = build_grid(4, 4, 300.0, 0.5)
        classical = classical_b_matrix(net)
        extended = extended_b_matrix(net)
        assert np.array_equal(extended.values[:, 0::3], classical.values)
        assert extended.control_ids[0::3] == classical.control_ids

    def test_yellow_columns_vanish_at_unit_friction_tight_capacity(self):
        net = build_grid(3, 3, 300.0, 0.5, friction=1.0, capacity_factor=1.0)
        extended = extended_b_matrix(net)
        yellows = np.concatenate([extended.values[:, 1::3],
                                  extended.values[:, 2::3]], axis=1)
        assert np.abs(yellows).max() == 0.0

    def test_reduction_property_through_dynamics(self):
        net = build_grid(4, 4, 300.0, 0.5, friction=0.3)
        n = len(net.state_links)
        rng = np.random.default_rng(31)
        for _ in range(100):
            greens = rng.uniform(4.0, 56.0, 16)
            plan = ControlPlan(greens, np.zeros(16), np.zeros(16), 60.0)
            x = rng.uniform(0.0, 30.0, n)
            d = rng.uniform(0.0, 4.0, n)
            ext, _ = predict_state(net, x, plan, d, clamp=False)
            # Classical route: green columns only, around zero controls.
            b = classical_b_matrix(net)
            classical = x + d + b.values @ greens
            # The classical affine offset is predict_state at g = 0.
            zero, _ = predict_state(net, x, ControlPlan(np.zeros(16), np.zeros(16),
                                                        np.zeros(16), 60.0),
                                    d, clamp=False)
            assert np.abs(ext - (classical + (zero - x - d))).max() <= 1e-12

    def test_linearity_of_state_in_controls(self):
        net = build_grid(4, 4, 300.0, 0.5, friction=0.3)
        n = len(net.state_links)
        b = extended_b_matrix(net)
        rng = np.random.default_rng(37)
        base = ControlPlan.uniform(16, 30.0, 15.0, 15.0, 60.0)
        x = rng.uniform(0.0, 30.0, n)
        d = rng.uniform(0.0, 4.0, n)
        ref, _ = predict_state(net, x, base, d, clamp=False)
        for _ in range(50):
            du = rng.uniform(-3.0, 3.0, 48)
            plan = ControlPlan.from_stacked(base.stacked() + du, 60.0)
            got, _ = predict_state(net, x, plan, d, clamp=False)
            assert np.abs(got - ref - b.values @ du).max() <= 1e-10

    def test_csv_round_trip(self, tmp_path):
        net = build_grid(2, 2, 300.0, 0.5, friction=0.3)
        b = extended_b_matrix(net)
        path = tmp_path / "b.csv"
        b.write_csv(str(path))
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["link_id"] + b.control_ids
        got = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
        assert rows[1][0] == b.link_ids[0]
        assert np.array_equal(got, b.values)


class TestControlPlan:
    def test_stacking_round_trip(self):
        rng = np.random.default_rng(41)
        plan = ControlPlan(rng.uniform(10, 50, 5), rng.uniform(0, 10, 5),
                           rng.uniform(0, 10, 5), 60.0)
        back = ControlPlan.from_stacked(plan.stacked(), 60.0)
        assert np.array_equal(back.greens, plan.greens)
        assert np.array_equal(back.yellows_first, plan.yellows_first)
        assert np.array_equal(back.yellows_second, plan.yellows_second)

    def test_stacked_interleaves_per_junction(self):
        plan = ControlPlan(np.array([1.0, 4.0]), np.array([2.0, 5.0]),
                           np.array([3.0, 6.0]), 60.0)
        assert plan.stacked().tolist() == [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]

    def test_from_stacked_validates_length(self):
        with pytest.raises(ValueError):
            ControlPlan.from_stacked(np.zeros(7), 60.0)

    def test_at_and_copy(self):
        plan = ControlPlan.uniform(3, 30.0, 10.0, 5.0, 60.0)
        ctl = plan.at(1)
        assert (ctl.green, ctl.yellow_first, ctl.yellow_second) == (30.0, 10.0, 5.0)
        dup = plan.copy()
        dup.greens[0] = 99.0
        assert plan.greens[0] == 30.0
