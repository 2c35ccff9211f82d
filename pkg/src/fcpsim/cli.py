"""Command-line entry point: ``fcpsim run|tune|study|fit``."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from . import metrics as M
from .config import ConfigError, default_output_root, load_config, save_config
from .harness import RunError, build_trajectory, run_scenario, write_trajectory_csv
from .plant import PlantFault
from .studies import (
    ComparisonResult,
    run_force_width_study,
    run_slippage_study,
    run_tilted_bed_study,
)
from .tuner import TuneError, TuneSpec, tune

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_FAULT = 4

SCENARIO_DIR = Path(__file__).parent / "data" / "scenarios"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="override the sensor-noise seed")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--noise-off", action="store_true", help="zero sensor noise")

    p = _Parser(prog="fcpsim", description="Force-controlled extrusion simulator.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    r = sub.add_parser("run", parents=[common], help="run one scenario")
    r.add_argument("config", help="scenario YAML (or the name of a shipped scenario)")
    t = sub.add_parser("tune", parents=[common], help="tune controller gains on a scenario")
    t.add_argument("config")
    t.add_argument("--budget", type=int, help="override tune.budget")
    t.add_argument("--workers", type=int, help="parallel evaluations per poll")
    s = sub.add_parser("study", parents=[common], help="run a named experiment")
    s.add_argument("study", choices=("force-width", "tilted-bed", "slippage"))
    s.add_argument("config")
    s.add_argument("--workers", type=int, default=1)
    f = sub.add_parser("fit", help="least-squares width = a * force + b from a 2-column CSV")
    f.add_argument("points", type=Path)
    return p


def resolve_config(name: str) -> Path:
    path = Path(name)
    if path.exists():
        return path
    shipped = SCENARIO_DIR / f"{name}.yaml"
    if path.suffix == "" and shipped.exists():
        return shipped
    raise ConfigError(f"config file not found: {name}")


def _load(args):
    cfg = load_config(resolve_config(args.config))
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.noise_off:
        cfg = cfg.replace(plant=cfg.plant.without_noise())
    return cfg


def _out_dir(args, cfg) -> Path:
    if args.out is not None:
        return args.out
    if cfg.output_dir:
        return Path(cfg.output_dir)
    return default_output_root() / cfg.name


def cmd_run(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    rec = run_scenario(cfg)
    log_path = rec.write(out)
    write_trajectory_csv(build_trajectory(cfg), out / "run_trajectory.csv")
    for (name, region), value in rec.metrics.items():
        print(f"{name}.{region}={value!r}")
    print(f"log: {log_path}")
    if rec.error:
        print(f"fcpsim: simulation fault: {rec.error}", file=sys.stderr)
        return EXIT_FAULT
    return EXIT_OK


def cmd_tune(args) -> int:
    cfg = _load(args)
    if args.budget is not None:
        cfg.tune.budget = args.budget
    if args.workers is not None:
        cfg.tune.workers = args.workers
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    res = tune(TuneSpec.from_config(cfg))
    res.write_trace(out / "tune_trace.csv")
    res.write_best(out / "best_gains.txt")
    g = res.best_gains
    print(f"best J = {res.best_J!r} N after {len(res.evaluation_trace)} evaluations")
    print(f"kp={g.kp!r} ki={g.ki!r} kd={g.kd!r} kdd={g.kdd!r} d={g.d}")
    print(f"gains: {out / 'best_gains.txt'}")
    return EXIT_OK


def cmd_study(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "study_config.yaml")
    if args.study == "force-width":
        res = run_force_width_study(cfg, workers=args.workers, out_dir=out)
        fit = res.fit
        print(f"slope={fit.slope!r} intercept={fit.intercept!r} r_squared={fit.r_squared!r} "
              f"rmse={fit.rmse!r} n={fit.n}")
    elif args.study == "tilted-bed":
        res = run_tilted_bed_study(cfg, workers=args.workers, out_dir=out)
        if isinstance(res, ComparisonResult):
            print(f"open-loop feed = {res.open_loop_speed!r} mm/s")
            for mode in ("closed_loop", "open_loop"):
                print(f"{mode}: width_rmse.all={res.rmse(mode, 'all')!r} "
                      f"width_rmse.linear={res.rmse(mode, 'linear')!r}")
            print(f"linear-region ratio = {res.linear_ratio!r}")
        else:
            sat = res.saturated
            print(f"stations={len(sat)} saturated={int(sat.sum())} threshold={res.threshold!r}")
            print(f"all_saturated_deviate={res.all_saturated_deviate} no_linear_deviates={res.no_linear_deviates}")
            for region, (n_dev, n) in res.sample_counts().items():
                print(f"samples {region}: {n_dev} of {n} beyond threshold")
    else:
        res = run_slippage_study(cfg, workers=args.workers, out_dir=out)
        for mode in ("closed_loop", "open_loop"):
            print(f"{mode}: width_deficit={res.deficit(mode)!r}")
    print(f"outputs: {out}")
    return EXIT_OK


def read_points(path: Path) -> list[tuple[float, float]]:
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    except OSError as exc:
        raise ConfigError(f"cannot read points file {path}: {exc.strerror or exc}") from exc
    pts = []
    for i, r in enumerate(rows):
        try:
            pts.append((float(r[0]), float(r[1])))
        except (ValueError, IndexError):
            if i == 0:
                continue  # header
            raise ConfigError(f"{path}: line {i + 1} is not a (force, width) pair")
    return pts


def cmd_fit(args) -> int:
    fit = M.linear_fit(read_points(args.points))
    print(f"slope={fit.slope:.6f}")
    print(f"intercept={fit.intercept:.6f}")
    print(f"r_squared={fit.r_squared:.6f}")
    print(f"rmse={fit.rmse:.6g}")
    print(f"n={fit.n}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "tune": cmd_tune, "study": cmd_study, "fit": cmd_fit}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (PlantFault, RunError) as exc:
        print(f"fcpsim: simulation fault: {exc}", file=sys.stderr)
        return EXIT_FAULT
    except (ConfigError, TuneError, M.MetricError, ValueError, OSError) as exc:
        print(f"fcpsim: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
