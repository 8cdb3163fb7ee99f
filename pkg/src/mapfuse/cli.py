"""Command-line entry point: ``mapfuse {make-map,simulate,localize,evaluate}``.

Exit codes: 0 success, 1 input errors, 2 when a relocalization failed during
``localize`` (the trajectory is still written).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import PipelineConfig, dump_config, load_config
from .errors import LocalizationError
from .map_store import load_map, write_cloud
from .pipeline import Pipeline
from .sim.evaluate import compute_ate_rmse
from .sim.eventlog import read_event_log, read_trajectory, truth_samples, write_event_log, write_trajectory
from .sim.replay import replay
from .sim.sensors import NoiseModel
from .sim.scenario import ScenarioSpec, load_noise, load_scenario, make_world, pipeline_config, simulate

log = logging.getLogger("mapfuse")

EXIT_INPUT = 1
EXIT_RELOCALIZATION = 2


def _scenario(path) -> ScenarioSpec:
    return ScenarioSpec() if path is None else load_scenario(path)


def cmd_make_map(args) -> int:
    spec = _scenario(args.spec)
    world = make_world(spec)
    write_cloud(args.out, world, header=f"synthetic map, seed {spec.seed}, {len(world)} points")
    log.info("wrote %d points to %s", len(world), args.out)
    return 0


def cmd_simulate(args) -> int:
    spec = _scenario(args.spec)
    noise = load_noise(args.noise) if args.noise else NoiseModel()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    world, run = simulate(spec, noise)
    write_cloud(out / "map.txt", world, header=f"synthetic map, seed {spec.seed}")
    write_event_log(out, run.events)
    write_trajectory(out / "truth.txt", truth_samples(run.truth))
    (out / "config.cfg").write_text(dump_config(pipeline_config()), encoding="utf-8")
    log.info("simulated %d events (%d scans) into %s", len(run.events), run.lidar_count, out)
    return 0


def cmd_localize(args) -> int:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    gmap = load_map(args.map) if cfg.map_registration else None
    events = read_event_log(args.log)
    pipe = Pipeline(gmap, cfg)
    est = replay(events, gmap, cfg, pipeline=pipe)
    write_trajectory(args.out, est)
    st = pipe.stats
    log.info(
        "%d poses; %d registrations, %d failures, %d relocalization failures",
        len(est),
        st.registrations,
        st.failures,
        st.relocalization_failures,
    )
    return EXIT_RELOCALIZATION if st.relocalization_failures else 0


def cmd_evaluate(args) -> int:
    est = read_trajectory(args.est)
    truth = read_trajectory(args.truth)
    rmse = compute_ate_rmse(est, truth, args.max_dt, xy_only=args.xy_only)
    print(f"{rmse:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mapfuse", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("make-map", help="generate a synthetic prior map")
    m.add_argument("--spec", help="scenario spec file (defaults to the built-in loop)")
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_make_map)

    s = sub.add_parser("simulate", help="simulate sensors along the scenario loop")
    s.add_argument("--spec")
    s.add_argument("--noise", help="noise spec file (defaults to noise-free)")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    loc = sub.add_parser("localize", help="replay an event log against a map")
    loc.add_argument("--map", required=True)
    loc.add_argument("--log", required=True)
    loc.add_argument("--config")
    loc.add_argument("--out", required=True)
    loc.set_defaults(func=cmd_localize)

    e = sub.add_parser("evaluate", help="print ATE RMSE of a trajectory against truth")
    e.add_argument("--est", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--max-dt", type=float, default=0.02)
    e.add_argument("--xy-only", action="store_true", help="planar error only")
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors; keep 2 for relocalization failure
        return EXIT_INPUT if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (LocalizationError, OSError, ValueError) as exc:
        print(f"mapfuse: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
