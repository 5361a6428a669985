"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 embedding failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import __version__
from .exceptions import ConfigError, PerturbedLKError
from .excursion import ExcursionMask, lk_curvatures, bias_correct, normalize, read_pbm, write_pbm
from .field_sim import load_field, perturb, plan_embedding, sample_perturbation, save_field, simulate_gaussian
from .gkf import theory_sweep, write_theory_csv
from .harness import ExperimentConfig, csv_text, read_config_file, run_experiment
from .limit_law import bep_density, exact_mixture_density, limit_law_params, truncated_limit_density

MC_KINDS = {
    "mc-curvatures": "curvature_sweep",
    "mc-histogram": "histogram",
    "mc-infer": "inference",
    "mc-clt": "clt",
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment configuration (JSON or TOML)")
    p.add_argument("--seed", type=int, help="master seed (non-negative integer)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="worker threads")
    p.add_argument("--replicas", type=int, help="number of Monte Carlo replicas")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="perturbed-lk", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw one (perturbed) field and save it")
    _common(p)
    p.add_argument("--replica", type=int, default=0, help="replica index to draw")
    p.add_argument("--pbm-level", type=float, action="append", default=[],
                   help="also export the excursion mask at this level (repeatable)")

    p = sub.add_parser("lk", help="curvatures of a saved field or a PBM mask")
    _common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--field", help="raw float64 field written by 'simulate'")
    src.add_argument("--pbm", help="excursion mask in PBM format")
    p.add_argument("--levels", type=float, nargs="+", help="levels (with --field)")
    p.add_argument("--delta", type=float, default=1.0, help="pixel spacing (with --pbm)")
    p.add_argument("--perimeter", choices=("pixel", "crofton"), default="pixel")

    p = sub.add_parser("theory", help="density curves over a level grid")
    _common(p)

    p = sub.add_parser("limit-density", help="limit-law density curves")
    _common(p)
    p.add_argument("--points", type=int, help="grid points per curve")

    for name in MC_KINDS:
        p = sub.add_parser(name, help=f"Monte Carlo experiment ({MC_KINDS[name]})")
        _common(p)
    return ap


def load_config(args, kind: str | None = None) -> ExperimentConfig:
    """Config file (if any), then command-line overrides."""
    raw = read_config_file(args.config) if args.config else {}
    if kind is not None:
        raw["kind"] = kind
    for key in ("seed", "out", "threads", "replicas"):
        val = getattr(args, key, None)
        if val is not None:
            raw[key] = val
    if not isinstance(raw.get("seed", 0), int) or raw.get("seed", 0) < 0:
        raise ConfigError("seed must be a non-negative integer")
    return ExperimentConfig.from_dict(raw)


def _write(out_dir: str, fname: str, text: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, fname)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return path


def cmd_simulate(args) -> int:
    cfg = load_config(args)
    pspec = cfg.perturbations[0]
    plan = plan_embedding(cfg.model, cfg.grid, cfg.clip_tol)
    g = simulate_gaussian(plan, (cfg.seed, args.replica, 0), workers=cfg.threads)
    x = sample_perturbation(pspec, (cfg.seed, args.replica, 1))
    f = perturb(g, pspec, x)
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, f"field_{args.replica}.bin")
    save_field(f, path, cfg.model, {"perturbation": pspec.to_dict(), "x": x, "replica": args.replica})
    for u in args.pbm_level:
        write_pbm(ExcursionMask(f.values >= u, u, f.grid), os.path.join(cfg.out, f"mask_{args.replica}_u{u:g}.pbm"))
    print(path)
    return 0


def cmd_lk(args) -> int:
    if args.field:
        fld = load_field(args.field)
        if not args.levels:
            raise ConfigError("--levels is required with --field")
        masks = [ExcursionMask(fld.values >= u, u, fld.grid) for u in args.levels]
    else:
        masks = [read_pbm(args.pbm, delta=args.delta)]
    header = ["level", "L0", "L1", "L2", "euler4", "euler8", "c0_over_T", "c1_over_T", "c2_over_T",
              "c0_hat", "c1_hat", "c2_hat"]
    rows = []
    for m in masks:
        est = bias_correct(normalize(lk_curvatures(m, args.perimeter), m.grid), m.grid)
        rows.append([m.level, est.L0, est.L1, est.L2, est.euler4, est.euler8, *est.c_over_T, *est.c_hat])
    text = csv_text(header, rows)
    if args.out:
        print(_write(args.out, "lk.csv", text))
    else:
        sys.stdout.write(text)
    return 0


def cmd_theory(args) -> int:
    cfg = load_config(args)
    path = os.path.join(cfg.out, "theory.csv")
    os.makedirs(cfg.out, exist_ok=True)
    write_theory_csv(theory_sweep(cfg.model, cfg.levels, cfg.perturbations[0], cfg.grid), path)
    print(path)
    return 0


def cmd_limit_density(args) -> int:
    cfg = load_config(args)
    n = args.points or cfg.density_points
    header = ["level", "epsilon", "law", "y", "h_tilde", "h_exact", "f_bep0", "f_bep2", "f_bep4"]
    rows = []
    for u in cfg.levels:
        for p in cfg.perturbations:
            prm = limit_law_params(cfg.model, u, p, cfg.gamma_convention)
            y = np.linspace(-5, 5, n) * math.sqrt(prm.v)
            cols = [
                truncated_limit_density(cfg.model, u, p, y, params=prm),
                exact_mixture_density(cfg.model, u, p, y),
                *(bep_density(prm.v, d, y) for d in (0, 2, 4)),
            ]
            rows += [[u, p.epsilon, p.law, y[k], *(c[k] for c in cols)] for k in range(n)]
    print(_write(cfg.out, "limit_density.csv", csv_text(header, rows)))
    return 0


def cmd_mc(args) -> int:
    cfg = load_config(args, MC_KINDS[args.command])
    result = run_experiment(cfg, write=True)
    for fname in sorted(result.tables):
        print(os.path.join(cfg.out, fname))
    return 0


COMMANDS = {"simulate": cmd_simulate, "lk": cmd_lk, "theory": cmd_theory, "limit-density": cmd_limit_density}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors already
        return int(exc.code or 0)
    try:
        return COMMANDS.get(args.command, cmd_mc)(args)
    except PerturbedLKError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
