"""Command-line front end: ``map``, ``track`` and ``sweep``.

Exit codes: 0 success, 2 usage error (unknown command/flag, bad flag value,
empty sweep), 3 unreadable or invalid config file, 4 invalid ``--set``
override, 5 a sweep combination failed, 6 non-finite results.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import __version__
from .scenario import PRESET_ALIASES, PRESETS, Scenario, apply_override, parse_tracker, preset
from .selection import DEFAULT_TAU, GridSpec, build_service_area_map
from .sim import run_monte_carlo, sidecar, write_results

log = logging.getLogger("v2itrack")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_OVERRIDE = 4
EXIT_RUN = 5
EXIT_NONFINITE = 6

DEFAULT_SWEEPS = {
    "fig3_crossoverB": [("tracker", ["snr", "sanr"])],
    "fig4a_rsu1area": [("tracker", ["fixed:1", "sanr"])],
    "fig4b_rsu2area": [("tracker", ["fixed:2", "sanr"])],
    "fig5_rsu12": [
        ("tracker", ["sanr", "snr-joint", "sanr-joint", "full"]),
        ("radio.M", ["32", "64"]),
    ],
}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    command: str
    scenario: Scenario
    out_dir: Path
    source: str
    grid: GridSpec | None = None
    sweep_axes: list[tuple[str, list[str]]] = field(default_factory=list)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--preset", help=f"one of {', '.join(PRESETS + tuple(PRESET_ALIASES))}")
    src.add_argument("--config", type=Path, help="scenario JSON or a run.json sidecar")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="dotted scenario override, repeatable")
    common.add_argument("--trials", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--out", type=Path, default=Path("results"))
    common.add_argument("--policy", choices=("snr", "sanr"))
    common.add_argument("--tau", type=float)
    common.add_argument("--tracker", help="fixed:<u>, snr, sanr, snr-joint, sanr-joint or full")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="v2itrack", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    m = sub.add_parser("map", parents=[common], help="service-area map CSV")
    m.add_argument("--resolution", type=float, help="grid cell size in metres")
    sub.add_parser("track", parents=[common], help="Monte Carlo MSE series CSV")
    s = sub.add_parser("sweep", parents=[common], help="cartesian sweep of track runs")
    s.add_argument("--sweep", dest="axes", action="append", default=[],
                   metavar="KEY=V1,V2", help="sweep axis, repeatable")
    return p


def _load_config(path: Path) -> tuple[dict, dict | None]:
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(EXIT_CONFIG, f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise CliError(EXIT_CONFIG, f"config {path} must hold a JSON object")
    if "scenario" in data:
        return data["scenario"], data.get("grid")
    return data, None


def _resolve_scenario(args) -> tuple[Scenario, str, dict | None]:
    grid = None
    if args.config is not None:
        base, grid = _load_config(args.config)
        source = str(args.config)
        try:
            Scenario.from_dict(base)
        except ValueError as exc:
            raise CliError(EXIT_CONFIG, f"invalid config {args.config}: {exc}") from None
    else:
        name = args.preset or "fig5"
        try:
            base = preset(name).to_dict()
        except ValueError as exc:
            raise CliError(EXIT_USAGE, str(exc)) from None
        source = f"preset:{name}"

    d = base
    for item in args.overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise CliError(EXIT_OVERRIDE, f"override {item!r} is not KEY=VALUE")
        try:
            d = apply_override(d, key, raw)
        except KeyError:
            raise CliError(EXIT_OVERRIDE, f"override {key!r} does not name a scenario field") from None
    try:
        sc = Scenario.from_dict(d)
    except ValueError as exc:
        raise CliError(EXIT_OVERRIDE, f"invalid override: {exc}") from None

    try:
        if args.policy is not None and args.policy != sc.policy.kind:
            sc = replace(sc, policy=replace(sc.policy, kind=args.policy,
                                            tau_th=DEFAULT_TAU[args.policy]),
                         tracker="full" if args.tracker is None else sc.tracker)
        if args.tracker is not None:
            sc = sc.with_tracker(args.tracker, args.tau)
        elif args.tau is not None:
            sc = replace(sc, policy=replace(sc.policy, tau_th=args.tau))
        if args.trials is not None:
            sc = replace(sc, trials=args.trials)
        if args.seed is not None:
            sc = replace(sc, master_seed=args.seed)
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from None
    return sc, source, grid


def _parse_axes(raw_axes: list[str], sc: Scenario) -> list[tuple[str, list[str]]]:
    if not raw_axes:
        axes = DEFAULT_SWEEPS.get(sc.name)
        if not axes:
            raise CliError(EXIT_USAGE, "empty sweep: give --sweep KEY=V1,V2 or a preset with a default sweep")
        return [(k, list(v)) for k, v in axes]
    axes = []
    for item in raw_axes:
        key, sep, vals = item.partition("=")
        values = [v for v in vals.split(",") if v]
        if not sep or not key or not values:
            raise CliError(EXIT_USAGE, f"empty sweep axis {item!r}")
        axes.append((key, values))
    return axes


def parse_and_validate(argv=None) -> RunConfig:
    """Parse argv into a fully resolved :class:`RunConfig`.

    Raises :class:`CliError` (or ``SystemExit`` from argparse for unknown
    flags and commands).
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    sc, source, grid_d = _resolve_scenario(args)
    cfg = RunConfig(args.command, sc, args.out, source)
    if args.command == "map":
        try:
            grid = GridSpec(**grid_d) if grid_d else GridSpec.default_for(sc.geom)
            if args.resolution is not None:
                grid = replace(grid, resolution=args.resolution)
        except (TypeError, ValueError) as exc:
            raise CliError(EXIT_USAGE, f"invalid grid: {exc}") from None
        cfg.grid = grid
    if args.command == "sweep":
        cfg.sweep_axes = _parse_axes(args.axes, sc)
        for key, values in cfg.sweep_axes:
            for v in values:
                _apply_axis(sc, key, v)
    return cfg


def _apply_axis(sc: Scenario, key: str, value: str) -> Scenario:
    if key == "tracker":
        try:
            parse_tracker(value)
            return sc.with_tracker(value)
        except ValueError as exc:
            raise CliError(EXIT_USAGE, str(exc)) from None
    try:
        return Scenario.from_dict(apply_override(sc.to_dict(), key, value))
    except KeyError:
        raise CliError(EXIT_USAGE, f"sweep key {key!r} does not name a scenario field") from None
    except ValueError as exc:
        raise CliError(EXIT_USAGE, f"invalid sweep value {key}={value}: {exc}") from None


def _label(combo: list[tuple[str, str]]) -> str:
    parts = [f"{k.split('.')[-1]}-{v}".replace(":", "") for k, v in combo]
    return "__".join(parts)


def sweep(cfg: RunConfig) -> list[Path]:
    """Run every combination of the sweep axes with the shared master seed."""
    out = Path(cfg.out_dir)
    written, combos = [], []
    keys = [k for k, _ in cfg.sweep_axes]
    for values in itertools.product(*(v for _, v in cfg.sweep_axes)):
        combo = list(zip(keys, values))
        label = _label(combo)
        sc = cfg.scenario
        for k, v in combo:
            sc = _apply_axis(sc, k, v)
        log.info("sweep %s", label)
        try:
            series = run_monte_carlo(sc)
        except Exception as exc:
            raise CliError(EXIT_RUN, f"sweep combination {label} failed: {exc}") from exc
        if not series.is_finite():
            raise CliError(EXIT_NONFINITE, f"non-finite MSE in sweep combination {label}")
        csv_path, _ = write_results(series, sc, out, stem=label, sidecar_name=f"{label}.json",
                                    command="track", source=cfg.source)
        written.append(csv_path)
        combos.append({"label": label, "csv": csv_path.name, "sidecar": f"{label}.json",
                       "values": dict(combo)})
    summary = sidecar(cfg.scenario, command="sweep", source=cfg.source,
                      axes=[[k, v] for k, v in cfg.sweep_axes], combinations=combos)
    (out / "run.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return written


def run(cfg: RunConfig) -> list[Path]:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sc = cfg.scenario
    if cfg.command == "map":
        amap = build_service_area_map(sc.policy, cfg.grid, sc.geom, sc.radio)
        path = amap.to_csv(out / "map.csv")
        meta = sidecar(sc, command="map", source=cfg.source, grid=vars(cfg.grid).copy(),
                       joint_fraction=amap.joint_fraction())
        (out / "run.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return [path]
    if cfg.command == "track":
        series = run_monte_carlo(sc)
        if not series.is_finite():
            raise CliError(EXIT_NONFINITE, "non-finite MSE values")
        csv_path, _ = write_results(series, sc, out, command="track", source=cfg.source,
                                    mean_samples_used=series.mean_samples_used)
        return [csv_path]
    return sweep(cfg)


def main(argv=None) -> int:
    try:
        cfg = parse_and_validate(argv)
        paths = run(cfg)
    except CliError as exc:
        print(f"v2itrack: error: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"v2itrack: error: cannot write output: {exc}", file=sys.stderr)
        return EXIT_RUN
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
