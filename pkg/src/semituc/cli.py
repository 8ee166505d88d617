"""Command line entry points.

Subcommands:

* ``grid``     -- build a grid network and dump its node/edge CSV tables.
* ``synth``    -- synthesize the feedback gain for a scenario and export it.
* ``run``      -- execute one scenario, writing cycle/trip/circuit CSVs.
* ``compare``  -- run classical against semi mode over several gammas.

Exit codes: 0 success, 1 configuration/validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from .config import ConfigError, ScenarioConfig, load_config
from .lqr import SynthesisError, write_gain_csv
from .network import build_grid, validate, write_network_csv
from .plots import export_plots
from .runner import compare, run_scenario, synthesize


def _add_override_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=("classical", "semi"),
                   help="override the config's control mode")
    p.add_argument("--gamma", type=float, help="override the friction coefficient")
    p.add_argument("--seed", type=int, help="override the random seed")
    p.add_argument("--duration", type=float,
                   help="override the run duration in seconds")


def _apply_overrides(cfg: ScenarioConfig, args: argparse.Namespace) -> ScenarioConfig:
    changes = {}
    for name in ("mode", "gamma", "seed", "duration"):
        value = getattr(args, name, None)
        if value is not None:
            changes[name] = value
    return dataclasses.replace(cfg, **changes) if changes else cfg


def _cmd_grid(args: argparse.Namespace) -> int:
    net = build_grid(args.rows, args.cols, args.length, args.sat_flow / 3600.0)
    problems = validate(net)
    if problems:
        raise ConfigError(problems)
    os.makedirs(args.out, exist_ok=True)
    nodes = os.path.join(args.out, "nodes.csv")
    edges = os.path.join(args.out, "edges.csv")
    write_network_csv(net, nodes, edges)
    print(f"junctions: {len(net.junctions)}  links: {len(net.links)}  "
          f"circuits: {len(net.circuits)}")
    for circuit in net.circuits:
        print(f"  {circuit.kind}: {' -> '.join(circuit.links)} ({circuit.orientation})")
    print(f"wrote {nodes} and {edges}")
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    net = cfg.build_network()
    bundle = synthesize(cfg, net)
    os.makedirs(args.out, exist_ok=True)
    gain_path = os.path.join(args.out, "gain.csv")
    b_path = os.path.join(args.out, "b_matrix.csv")
    write_gain_csv(gain_path, bundle.synthesis.gain,
                   bundle.b_matrix.control_ids, bundle.b_matrix.link_ids)
    bundle.b_matrix.write_csv(b_path)
    print(f"mode: {cfg.mode}  controls: {len(bundle.b_matrix.control_ids)}  "
          f"links: {len(bundle.b_matrix.link_ids)}")
    print(f"DARE residual: {bundle.synthesis.residual:.3e}  "
          f"closed-loop radius: {bundle.synthesis.closed_loop_radius:.6f}")
    print(f"wrote {gain_path} and {b_path}")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    result = run_scenario(cfg, args.out)
    totals = result.summary["totals"]
    audits = result.summary["audits"]
    print(f"mode: {cfg.mode}  gamma: {cfg.gamma}  seed: {cfg.seed}  "
          f"cycles: {cfg.n_cycles}")
    print(f"spawned: {totals['spawned']}  ended: {totals['ended']}  "
          f"final running: {totals['final_running']}  "
          f"queued: {totals['final_queued']}")
    tt = totals["mean_tt_s"]
    print(f"mean travel time: {'n/a' if tt is None else f'{tt:.1f} s'}")
    print(f"audits: conservation failures {audits['conservation_failures']}, "
          f"overlaps {audits['overlap_violations']}, "
          f"red crossings {audits['red_crossings']}")
    if args.out:
        if args.plots:
            net = cfg.build_network()
            label = result.summary["mode"]
            export_plots({label: result.records}, args.out, net=net,
                         stack_label=label)
        print(f"artifacts in {args.out}")
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    base = _apply_overrides(load_config(args.config), args)
    gammas = [float(g) for g in args.gammas.split(",")] if args.gammas else [0.3, 0.5, 0.7]
    configs = [dataclasses.replace(base, mode="classical")]
    configs += [dataclasses.replace(base, mode="semi", gamma=g) for g in gammas]
    report = compare(configs, args.out)
    print("finals (running / ended / mean travel time):")
    for label in report.labels:
        r = report.finals["running"][label]
        e = report.finals["ended"][label]
        t = report.finals["mean_tt"][label]
        print(f"  {label:>16}: {r:8.0f} / {e:8.0f} / {t:8.1f} s")
    print("verdicts: " + ", ".join(f"{m}: {lab}" for m, lab in report.verdicts.items()))
    if args.out and args.plots:
        net = base.build_network()
        runs = {lab: res.records for lab, res in zip(report.labels, report.results)}
        semi_labels = [lab for lab in report.labels if lab.startswith("semi")]
        export_plots(runs, args.out, net=net,
                     stack_label=semi_labels[0] if semi_labels else None)
    if args.out:
        print(f"artifacts in {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semituc",
        description="Store-and-forward signal control workbench: synthesize "
                    "LQ split controllers, simulate them microscopically, "
                    "compare classical and contention-window control.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("grid", help="build a grid network and dump CSV tables")
    p.add_argument("--rows", type=int, default=4)
    p.add_argument("--cols", type=int, default=4)
    p.add_argument("--length", type=float, default=300.0, help="link length [m]")
    p.add_argument("--sat-flow", type=float, default=1800.0,
                   help="saturation flow [veh/h]")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_grid)

    p = sub.add_parser("synth", help="synthesize and export the feedback gain")
    p.add_argument("--config", required=True, help="scenario JSON path")
    p.add_argument("--out", required=True, help="output directory")
    _add_override_flags(p)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("run", help="run one scenario")
    p.add_argument("--config", required=True, help="scenario JSON path")
    p.add_argument("--out", help="output directory for CSV artifacts")
    p.add_argument("--plots", action="store_true", help="also write SVG plots")
    _add_override_flags(p)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("compare", help="classical vs semi over several gammas")
    p.add_argument("--config", required=True, help="scenario JSON path")
    p.add_argument("--gammas", help="comma-separated friction values "
                                    "(default 0.3,0.5,0.7)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--plots", action="store_true", help="also write SVG plots")
    p.add_argument("--seed", type=int, help="override the random seed")
    p.add_argument("--duration", type=float, help="override the duration [s]")
    p.set_defaults(func=_cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SynthesisError as exc:
        print(f"synthesis failed: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures map to exit code 2
        print(f"failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
