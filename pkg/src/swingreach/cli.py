"""Command-line scenario runner.

Every subcommand writes its artifacts under ``--out`` together with
``<command>.meta.json``, which records the resolved configuration and a
SHA-256 of every file written. Identical configurations give byte-identical
outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import attack as atk
from .config import ConfigError, ScenarioConfig, load_config
from .grid import GridError, extract_zero_contour, pointwise_min, write_field_csv
from .hjsolver import DisturbanceBound, SolverError
from .hitl.endpoints import run_controller_endpoint, run_plant_endpoint
from .hitl.loop import run_loop
from .hitl.protocol import ProtocolError
from .hitl.proxy import SpoofProxy, SpoofRule
from .hitl.transport import TransportClosed, TransportTimeout, accept, connect, listen
from .plant import (
    PlantError,
    RelayStatus,
    constant_relay,
    equilibria,
    relay_switch_at,
    simulate,
)
from .reachability import (
    SetResult,
    invariant_set,
    is_empty,
    stability_region,
    viability_set,
)

log = logging.getLogger("swingreach")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class Outputs:
    """Tracks written files so the run metadata can list them."""

    def __init__(self, root: Path):
        self.root = root
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: list = []

    def path(self, name: str) -> Path:
        return self.root / name

    def add(self, *paths) -> None:
        self.files.extend(Path(p) for p in paths)

    def write_json(self, name: str, obj) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
        self.add(p)
        return p

    def finish(self, command: str, cfg: ScenarioConfig, summary: dict) -> Path:
        files = {}
        for p in sorted(set(self.files)):
            files[p.relative_to(self.root).as_posix()] = hashlib.sha256(p.read_bytes()).hexdigest()
        meta = {"command": command, "config": cfg.as_dict(), "summary": summary, "files": files}
        p = self.path(f"{command}.meta.json")
        p.write_text(json.dumps(_jsonable(meta), indent=2, sort_keys=True) + "\n")
        return p


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, RelayStatus):
        return obj.value
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _tag(t: float) -> str:
    return f"t{t:g}"


def _snapshot_result(res: SetResult, t: float) -> SetResult:
    field = res.value_field if t >= res.horizon else res.snapshots[t]
    return SetResult(field, res.kind, t, res.relay, res.dbound, res.converged_at, {}, res.solve)


def _save_bundle(out: Outputs, res: SetResult, stem: str) -> None:
    snaps, res.snapshots = res.snapshots, {}
    try:
        out.add(*res.save(out.root, stem))
    finally:
        res.snapshots = snaps


def _snapshot_times(horizon: float, wanted) -> list:
    return sorted({t for t in wanted if 0 <= t <= horizon} | {horizon})


# -- subcommands ----------------------------------------------------------------


def cmd_stability(cfg: ScenarioConfig, out: Outputs, args) -> dict:
    times = _snapshot_times(cfg.horizon, (1.5, 3.0))
    summary = {}
    for relay in cfg.relays:
        solver = cfg.solve_config(snapshot_times=tuple(t for t in times if t < cfg.horizon))
        res = stability_region(cfg.params, relay, cfg.horizon, cfg.ball_radii, cfg.grid, solver)
        for t in times:
            _save_bundle(out, _snapshot_result(res, t), f"stability_{relay.value}_{_tag(t)}")
        summary[relay.value] = {
            "converged_at": res.converged_at,
            "region_stable_at": res.solve.region_stable_at,
            "members": res.member_count(),
            "checkpoints": [cp.__dict__ for cp in res.solve.checkpoints],
        }
        print(f"stability {relay.value}: converged_at={res.converged_at} "
              f"region_stable_at={res.solve.region_stable_at} members={res.member_count()}")
    return summary


def cmd_invariant(cfg: ScenarioConfig, out: Outputs, args) -> dict:
    times = _snapshot_times(cfg.horizon, (0.0, 1.5, 3.0))
    safe = cfg.safe_bounds
    summary, finals = {}, {}
    for relay in cfg.relays:
        solver = cfg.solve_config(snapshot_times=tuple(t for t in times if t < cfg.horizon))
        entry = {}
        for name, fn in (("invariant", invariant_set), ("viability", viability_set)):
            res = fn(safe, cfg.params, relay, cfg.dbound, cfg.horizon, cfg.grid, solver)
            for t in times:
                _save_bundle(out, _snapshot_result(res, t), f"{name}_{relay.value}_{_tag(t)}")
            entry[name] = {"empty": is_empty(res), "members": res.member_count(),
                           "converged_at": res.converged_at,
                           "region_stable_at": res.solve.region_stable_at}
            if name == "invariant":
                finals[relay] = res
            print(f"{name} {relay.value}: empty={is_empty(res)} members={res.member_count()}")
        summary[relay.value] = entry
    if len(finals) == 2:
        both = pointwise_min(finals[RelayStatus.OPEN].value_field, finals[RelayStatus.CLOSED].value_field)
        p = out.path("invariant_intersection.csv")
        write_field_csv(both, p)
        c = out.path("invariant_intersection.contour.json")
        c.write_text(extract_zero_contour(both).to_json())
        out.add(p, c)
        summary["intersection"] = {"empty": is_empty(both),
                                   "members": int(np.count_nonzero(both.values >= 0))}
    return summary


def _value_field_for_policy(cfg: ScenarioConfig, relay: RelayStatus, policy: str):
    fn = invariant_set if policy == "keep_out" else viability_set
    return fn(cfg.safe_bounds, cfg.params, relay, cfg.dbound, cfg.horizon, cfg.grid,
              cfg.solve_config()).value_field


def _policy(cfg: ScenarioConfig, relay: RelayStatus):
    kind = cfg.sim.policy
    if kind == "zero":
        return atk.AttackPolicy(atk.AttackMode.ZERO, cfg.dbound)
    if kind == "constant":
        return atk.AttackPolicy(atk.AttackMode.CONSTANT, cfg.dbound, constant=cfg.sim.constant)
    mode = atk.AttackMode.KEEP_OUT if kind == "keep_out" else atk.AttackMode.KEEP_IN
    return atk.AttackPolicy(mode, cfg.dbound, _value_field_for_policy(cfg, relay, kind), cfg.params)


def _schedule(cfg: ScenarioConfig, relay: RelayStatus):
    if cfg.sim.relay_switch_time is None:
        return constant_relay(relay)
    other = RelayStatus.OPEN if relay is RelayStatus.CLOSED else RelayStatus.CLOSED
    return relay_switch_at(cfg.sim.relay_switch_time, relay, other)


def _outcome(traj, cfg: ScenarioConfig, relay: RelayStatus) -> dict:
    safe = cfg.safe_bounds
    stable, _ = equilibria(cfg.params, relay)
    final = traj.final
    return {
        "first_exit_time": traj.first_exit_time(safe),
        "final": list(final),
        "final_distance_to_equilibrium": math.hypot(final[0] - stable.delta, final[1] - stable.omega),
        "returned_to_safe_set": bool(traj.safe_flags(safe)[-1]),
        "diverged": atk.diverged(traj, safe),
    }


def cmd_simulate(cfg: ScenarioConfig, out: Outputs, args) -> dict:
    summary = {}
    for relay in cfg.relays:
        policy = _policy(cfg, relay)
        for i, x0 in enumerate(cfg.x0):
            traj = simulate(x0, cfg.params, policy, _schedule(cfg, relay), cfg.sim.T, cfg.sim.dt)
            p = out.path(f"sim_{relay.value}_{i}.csv")
            traj.to_csv(p)
            out.add(p)
            res = _outcome(traj, cfg, relay)
            summary[f"{relay.value}_{i}"] = dict(res, x0=list(x0))
            print(f"simulate {relay.value} x0={x0}: exit={res['first_exit_time']} "
                  f"final=({res['final'][0]:.4f}, {res['final'][1]:.4f})")
    return summary


def _write_signal(path: Path, traj) -> None:
    lines = ["t,d"] + [f"{float(t)!r},{float(d)!r}" for t, d in zip(traj.t, traj.d)]
    path.write_text("\n".join(lines) + "\n")


class ExperimentFailure(RuntimeError):
    pass


def coordinated_experiment(cfg: ScenarioConfig) -> dict:
    """Region-based (or timed) coordinated plan plus the relay-held-closed control run."""
    a = cfg.attack
    stable_closed, _ = equilibria(cfg.params, RelayStatus.CLOSED)
    x0 = tuple(a.coordinated_x0) if a.coordinated_x0 is not None else tuple(stable_closed)
    region = stability_region(cfg.params, RelayStatus.OPEN, cfg.horizon, cfg.ball_radii,
                              cfg.grid, cfg.solve_config()).value_field
    if a.bound is not None:
        bound = float(a.bound)
        game = atk.phase1_field(region, cfg.params, DisturbanceBound.symmetric(bound),
                                cfg.horizon, a.margin, cfg.solve_config())
    else:
        found = atk.minimal_exit_bound(x0, region, cfg.params, a.bound_candidates, cfg.horizon,
                                       a.margin, cfg.solve_config())
        if found is None:
            raise ExperimentFailure("no candidate bound can drive the state out of the open-relay region")
        bound, game = found
    dbound = DisturbanceBound.symmetric(bound)
    runs = {}
    for label, relay in (("coordinated", RelayStatus.OPEN), ("control", RelayStatus.CLOSED)):
        plan = atk.region_plan(region, cfg.params, dbound, cfg.horizon, a.margin, relay, game=game)
        if a.switch == "time":
            plan = replace(plan, switch=atk.AtTime(a.t_switch))
        runs[label] = atk.run_coordinated(plan, x0, cfg.params, a.T)
    return {"x0": x0, "bound": bound, "runs": runs, "region": region, "game": game}


def cmd_attack(cfg: ScenarioConfig, out: Outputs, args) -> dict:
    safe = cfg.safe_bounds
    summary = {"optimal": {}}
    for relay in cfg.relays:
        inv = invariant_set(safe, cfg.params, relay, cfg.dbound, cfg.horizon, cfg.grid, cfg.solve_config())
        traj = atk.run_optimal_attack(cfg.attack.x0, inv.value_field, cfg.params, relay, cfg.dbound,
                                      cfg.horizon, cfg.sim.dt)
        p, q = out.path(f"attack_{relay.value}.csv"), out.path(f"attack_{relay.value}_signal.csv")
        traj.to_csv(p)
        _write_signal(q, traj)
        out.add(p, q)
        res = _outcome(traj, cfg, relay)
        res["x0_in_invariant_set"] = inv.contains(cfg.attack.x0)
        summary["optimal"][relay.value] = res
        print(f"attack {relay.value} x0={tuple(cfg.attack.x0)}: exit={res['first_exit_time']}")

    exp = coordinated_experiment(cfg)
    coord = {"x0": list(exp["x0"]), "bound": exp["bound"]}
    for label, traj in exp["runs"].items():
        p = out.path(f"coordinated_{label}.csv" if label == "control" else "coordinated.csv")
        traj.to_csv(p)
        out.add(p)
        phase2 = RelayStatus.OPEN if label == "coordinated" else RelayStatus.CLOSED
        coord[label] = dict(_outcome(traj, cfg, phase2), switch_time=traj.meta["switch_time"],
                            switch=traj.meta["switch"])
    out.write_json("coordinated.switch.json", {
        "switch_time": coord["coordinated"]["switch_time"],
        "switch": coord["coordinated"]["switch"],
        "bound": exp["bound"],
        "x0": coord["x0"],
    })
    summary["coordinated"] = coord
    print(f"coordinated: bound=+-{exp['bound']:g} switch_time={coord['coordinated']['switch_time']} "
          f"diverged={coord['coordinated']['diverged']} "
          f"control_distance={coord['control']['final_distance_to_equilibrium']:.3g}")
    return summary


def cmd_sweep(cfg: ScenarioConfig, out: Outputs, args) -> dict:
    bounds = atk.sweep_bounds(cfg.sweep.start, cfg.sweep.stop, cfg.sweep.step)
    summary = {}
    executor = ProcessPoolExecutor(args.jobs) if args.jobs > 1 else None
    try:
        for relay in cfg.relays:
            res = atk.emptiness_sweep(relay, bounds, cfg.horizon, cfg.safe_bounds, cfg.params,
                                      cfg.grid, cfg.solve_config(), executor)
            p = out.path(f"sweep_{relay.value}.csv")
            rows = ["bound,empty,members,max_value"] + [
                f"{e.bound!r},{int(e.empty)},{e.members},{e.max_value!r}" for e in res.entries
            ]
            p.write_text("\n".join(rows) + "\n")
            out.add(p)
            summary[relay.value] = res.as_dict()
            print(f"sweep {relay.value}: threshold={res.threshold} monotone={res.monotone}")
    finally:
        if executor is not None:
            executor.shutdown()
    return summary


def _spoof_rules(cfg: ScenarioConfig) -> list:
    return [SpoofRule(r["t0"], r["t1"], r["d"], r["relay"]) for r in cfg.spoof]


def cmd_hitl(cfg: ScenarioConfig, out: Outputs, args) -> dict:
    """Plant, zero-rule proxy and controller over local sockets, checked against ``simulate``."""
    h = cfg.hitl
    summary = {}
    failed = False
    for relay in cfg.relays:
        policy = _policy(cfg, relay)
        schedule = _schedule(cfg, relay)
        for i, x0 in enumerate(cfg.x0):
            loop = run_loop(cfg.params, x0, h.dt, h.T, policy, schedule, rules=[], dbound=cfg.dbound,
                            timeout=h.timeout)
            ref = simulate(x0, cfg.params, policy, schedule, h.T, h.dt)
            wire = loop.trajectory
            same_len = len(wire) == len(ref)
            dev = (max(float(np.max(np.abs(wire.delta - ref.delta))),
                       float(np.max(np.abs(wire.omega - ref.omega)))) if same_len else math.inf)
            ok = same_len and dev <= h.tolerance and not loop.tamper_log
            failed |= not ok
            p = out.path(f"hitl_{relay.value}_{i}.csv")
            wire.to_csv(p)
            out.add(p)
            summary[f"{relay.value}_{i}"] = {"samples": len(wire), "max_deviation": dev, "pass": ok}
            print(f"hitl {relay.value} x0={x0}: samples={len(wire)} max_dev={dev:.3g} "
                  f"{'PASS' if ok else 'FAIL'}")
    summary["pass"] = not failed
    if failed:
        args._failed = "hitl determinism check failed"
    return summary


def cmd_hitl_plant(cfg: ScenarioConfig, out: Outputs, args) -> dict:
    x0 = tuple(args.x0) if args.x0 else cfg.x0[0]
    with connect(args.connect, cfg.hitl.timeout, args.connect_retry) as t:
        traj = run_plant_endpoint(cfg.params, x0, cfg.hitl.dt, cfg.hitl.T, t)
    p = out.path("hitl_plant.csv")
    traj.to_csv(p)
    out.add(p)
    if traj.meta["aborted"]:
        args._failed = f"plant aborted: {traj.meta['bye_reason']}"
    return {"samples": len(traj), **traj.meta}


def cmd_hitl_controller(cfg: ScenarioConfig, out: Outputs, args) -> dict:
    relay = cfg.relays[0]
    policy, schedule = _policy(cfg, relay), _schedule(cfg, relay)
    server = listen(args.listen)
    try:
        with accept(server, args.accept_timeout) as t:
            sent = run_controller_endpoint(policy, schedule, t, cfg.params, cfg.hitl.dt)
    finally:
        server.close()
    p = out.path("hitl_controller.csv")
    p.write_text("\n".join(["seq,d,relay"] + [f"{c.seq},{c.d!r},{c.relay.value}" for c in sent]) + "\n")
    out.add(p)
    return {"commands": len(sent)}


def cmd_hitl_proxy(cfg: ScenarioConfig, out: Outputs, args) -> dict:
    log_path = out.path("tamper_log.jsonl")
    log_path.write_text("")
    proxy = SpoofProxy(_spoof_rules(cfg), cfg.dbound, log_path)
    server = listen(args.listen)
    try:
        with connect(args.upstream, cfg.hitl.timeout, args.connect_retry) as ctrl, \
                accept(server, args.accept_timeout) as plant:
            proxy.run(plant, ctrl)
    finally:
        server.close()
    out.add(log_path)
    return {"rewrites": len(proxy.tamper_log)}


COMMANDS = {
    "stability": (cmd_stability, "stability regions for both relay states"),
    "invariant": (cmd_invariant, "invariant and viability sets under the disturbance bound"),
    "simulate": (cmd_simulate, "trajectories from the configured initial states"),
    "attack": (cmd_attack, "optimal and coordinated attack runs"),
    "sweep": (cmd_sweep, "invariant-set emptiness thresholds over disturbance bounds"),
    "hitl": (cmd_hitl, "plant, proxy and controller in one process; determinism check"),
    "hitl-plant": (cmd_hitl_plant, "plant endpoint"),
    "hitl-controller": (cmd_hitl_controller, "controller endpoint"),
    "hitl-proxy": (cmd_hitl_proxy, "spoofing proxy endpoint"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON scenario file; built-in defaults when omitted")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--grid", type=int, metavar="N", help="grid nodes per axis")
    common.add_argument("--horizon", type=float, metavar="S", help="backward horizon in seconds")
    common.add_argument("--relay", choices=("open", "closed", "both"), help="relay state(s) to run")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="swingreach", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    parsers = {}
    for name, (_, help_text) in COMMANDS.items():
        parsers[name] = sub.add_parser(name, parents=[common], help=help_text)
    parsers["sweep"].add_argument("--jobs", type=int, default=1, help="worker processes")
    parsers["hitl-plant"].add_argument("--connect", required=True, metavar="HOST:PORT")
    parsers["hitl-plant"].add_argument("--x0", type=float, nargs=2, metavar=("DELTA", "OMEGA"))
    for name in ("hitl-controller", "hitl-proxy"):
        parsers[name].add_argument("--listen", required=True, metavar="HOST:PORT")
        parsers[name].add_argument("--accept-timeout", type=float, default=60.0,
                                   help="seconds to wait for the peer to connect")
    parsers["hitl-proxy"].add_argument("--upstream", required=True, metavar="HOST:PORT",
                                       help="controller address")
    for name in ("hitl-plant", "hitl-proxy"):
        parsers[name].add_argument("--connect-retry", type=float, default=10.0, metavar="S",
                                   help="keep retrying a refused connection for S seconds")
    return parser


def resolve_config(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    if args.grid is not None:
        if args.grid < 3:
            raise ConfigError("--grid needs at least 3 nodes")
        cfg.grid = cfg.grid.with_resolution(args.grid)
    if args.horizon is not None:
        if not args.horizon >= 0:
            raise ConfigError("--horizon must be non-negative")
        cfg.horizon = args.horizon
    if args.relay is not None:
        cfg.relay = args.relay
    if args.out is not None:
        cfg.out = str(args.out)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except (ConfigError, GridError) as exc:
        print(f"swingreach: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    fn, _ = COMMANDS[args.command]
    out = Outputs(Path(cfg.out))
    args._failed = None
    try:
        summary = fn(cfg, out, args)
    except ConfigError as exc:
        print(f"swingreach: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, PlantError, GridError, ProtocolError, ExperimentFailure,
            TransportClosed, TransportTimeout, OSError, ValueError) as exc:
        print(f"swingreach: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    out.finish(args.command, cfg, summary)
    if args._failed:
        print(f"swingreach: {args._failed}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
