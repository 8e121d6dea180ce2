"""Command-line entry point: ``ghostbench <subcommand> ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__, kernels
from .cellmaps import RetinaSpec
from .core import ImageError, RoiSpec, save_image
from .forward import NoiseModel, measure, read_measurements_csv, write_measurements_csv
from .harness import (
    METHOD_FAMILY, ConfigError, ExperimentConfig, config_from_mapping, load_config, load_object,
    run_experiment, run_noise_sweep, run_resolution_scaling,
)
from .patterns import PatternError, build_schedule, generate_sequence, read_pattern_stack, write_pattern_stack
from .recon import ReconstructionError, TvProblem, solve_tv

log = logging.getLogger("ghostbench")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, help="row or pattern seed")
    p.add_argument("--resolution", type=int, help="actual resolution M (pixels per side)")
    p.add_argument("--roi", help="region of interest as cx,cy,r in pixels")
    p.add_argument("--m1", type=int, help="lowest imaging resolution (cells per side)")
    p.add_argument("--out", help="output file or directory")


def _grid_args(p: argparse.ArgumentParser) -> None:
    _common(p)
    p.add_argument("--config", help="key = value config file (CLI flags override it)")
    p.add_argument("--object", help="built-in name (peppers, bit) or image path")
    p.add_argument("--methods", help="comma list of UCGI,TVCGI,SVCGI,TSVCGI")
    p.add_argument("--counts", help="comma list of measurement counts T")
    p.add_argument("--sigmas", help="comma list of noise levels")
    p.add_argument("--sigma-mode", choices=("relative", "absolute"))
    p.add_argument("--seeds", help="comma list of row seeds")
    p.add_argument("--resolutions", help="comma list of resolutions (scaling)")
    p.add_argument("--fidelity-weight", type=float)
    p.add_argument("--penalty-weight", type=float)
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--cg-iterations", type=int)
    p.add_argument("--isotropic", action="store_const", const="true")
    p.add_argument("--no-stacks", dest="save_stacks", action="store_const", const="false")
    p.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ghostbench", description=__doc__)
    parser.add_argument("--version", action="version",
                        version=f"ghostbench {__version__} ({kernels.BACKEND} kernels)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("patterns", help="generate a pattern sequence and write a GPAT1 stack")
    _common(p)
    p.add_argument("--method", default="TVCGI", choices=sorted(METHOD_FAMILY))
    p.add_argument("--count", type=int, required=True, help="number of patterns T")
    p.add_argument("--roi-cell-size", type=int, default=1)

    p = sub.add_parser("measure", help="simulate bucket intensities for an object and a stack")
    _common(p)
    p.add_argument("--object", default="peppers")
    p.add_argument("--stack", required=True)
    p.add_argument("--sigma", type=float, default=0.0, help="absolute noise std dev")
    p.add_argument("--noise-mean", type=float, default=0.0)

    p = sub.add_parser("reconstruct", help="TV reconstruction from a stack and intensities")
    _common(p)
    p.add_argument("--stack", required=True)
    p.add_argument("--intensities", required=True)
    p.add_argument("--fidelity-weight", type=float, default=2.0**7)
    p.add_argument("--penalty-weight", type=float, default=2.0**4)
    p.add_argument("--max-iterations", type=int, default=300)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--isotropic", action="store_true")

    for name, text in (("experiment", "run a method/T/sigma/seed grid"),
                       ("noise-sweep", "run a grid over noise levels"),
                       ("scaling", "compare TSVCGI and UCGI across resolutions")):
        _grid_args(sub.add_parser(name, help=text))
    return parser


_FLAG_KEYS = {
    "object": "object", "resolution": "resolution", "methods": "methods", "counts": "counts",
    "sigmas": "sigmas", "sigma_mode": "sigma_mode", "roi": "roi", "m1": "m1", "seeds": "seeds",
    "resolutions": "resolutions", "fidelity_weight": "fidelity_weight",
    "penalty_weight": "penalty_weight", "max_iterations": "max_iterations",
    "tolerance": "tolerance", "cg_iterations": "cg_iterations", "isotropic": "isotropic",
    "save_stacks": "save_stacks", "workers": "workers", "out": "out",
}


def grid_config(args) -> ExperimentConfig:
    overrides = {key: getattr(args, attr) for attr, key in _FLAG_KEYS.items()
                 if getattr(args, attr, None) is not None}
    if args.seed is not None and args.seeds is None:
        overrides["seeds"] = str(args.seed)
    if args.config:
        return load_config(args.config, overrides)
    return config_from_mapping(overrides)


def _cmd_patterns(args):
    M = args.resolution or 64
    roi = RoiSpec.parse(args.roi) if args.roi else RoiSpec.centered(M, M, M / 4)
    schedule = build_schedule(M, args.m1 or max(M // 8, 1))
    retina = RetinaSpec.default(M, roi, args.roi_cell_size)
    seq = generate_sequence(METHOD_FAMILY[args.method], M, args.count, schedule=schedule,
                            retina=retina, seed=args.seed or 0)
    out = Path(args.out or f"{args.method}_M{M}_T{args.count}.gpat")
    write_pattern_stack(seq, out)
    print(f"wrote {seq.count} patterns ({seq.family}, {M}x{M}) to {out}")


def _cmd_measure(args):
    seq = read_pattern_stack(args.stack)
    obj = load_object(args.object, seq.width)
    ms = measure(obj, seq, NoiseModel(args.noise_mean, args.sigma, args.seed or 0))
    out = Path(args.out or "intensities.csv")
    write_measurements_csv(ms, out)
    print(f"wrote {ms.count} intensities to {out}")


def _cmd_reconstruct(args):
    seq = read_pattern_stack(args.stack)
    ms = read_measurements_csv(args.intensities)
    if ms.sequence_hash != seq.digest:
        log.warning("intensities were recorded for a different pattern stack")
    sol = solve_tv(TvProblem(seq, ms, fidelity_weight=args.fidelity_weight,
                             penalty_weight=args.penalty_weight, max_iterations=args.max_iterations,
                             tolerance=args.tolerance, isotropic=args.isotropic))
    out = Path(args.out or "reconstruction.pgm")
    save_image(sol.image, out)
    state = "converged" if sol.converged else "stopped"
    print(f"{state} after {sol.iterations_used} iterations, residual {sol.final_residual:.3e}; wrote {out}")


def _print_rows(result):
    for row in result.rows:
        print(f"{row.method:7s} T={row.T:<6d} sigma={row.sigma:<6g} seed={row.seed:<4d} "
              f"PSNR {row.psnr_full_db:6.2f} dB  ROI {row.psnr_roi_db:6.2f} dB  ({row.wall_ms} ms)")


def _cmd_experiment(args):
    cfg = grid_config(args)
    result = run_experiment(cfg)
    _print_rows(result)
    print(f"results in {cfg.output_dir}")


def _cmd_noise_sweep(args):
    cfg = grid_config(args)
    result = run_noise_sweep(cfg)
    _print_rows(result)
    print(f"results in {cfg.output_dir}")


def _cmd_scaling(args):
    cfg = grid_config(args)
    out = run_resolution_scaling(cfg)
    print(out.table(), end="")
    print(f"results in {cfg.output_dir}")


_COMMANDS = {
    "patterns": _cmd_patterns, "measure": _cmd_measure, "reconstruct": _cmd_reconstruct,
    "experiment": _cmd_experiment, "noise-sweep": _cmd_noise_sweep, "scaling": _cmd_scaling,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        _COMMANDS[args.command](args)
    except (ConfigError, ImageError, PatternError, ReconstructionError, ValueError, OSError) as exc:
        print(f"ghostbench: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
