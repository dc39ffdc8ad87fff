"""Command-line entry point: ``ngi <subcommand> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import experiments
from .analysis import SNRModel, central_profile, frc, frc_resolution, fwhm, snr_predict
from .image import Image2D
from .io import (ConfigError, StackFile, beam_geometry, detector_of, load_config, mask_config,
                 parse_override, merge, read_bucket_csv, read_stack, recon_config, write_bucket_csv,
                 write_pgm, write_residual_csv, write_stack)
from .mask import SpeckleEnsemble, generate_ensemble, generate_mask, sweep_angles, speckle_contrast
from .measurement import BucketGrid, BucketSeries, phantom, simulate_bucket_series
from .recon import NumericalError, ReconConfig, psf_autocovariance, superres_reconstruct

log = logging.getLogger("ngi")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _workers(threads: int) -> int:
    return threads if threads > 0 else (os.cpu_count() or 1)


def _config(args) -> dict:
    over: dict = {}
    for text in args.set or []:
        over = merge(over, parse_override(text))
    if args.seed is not None:
        over["seed"] = args.seed
    return load_config(args.config, over)


def _out(args) -> Path:
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _ensemble(stack: StackFile) -> SpeckleEnsemble:
    if stack.kind != "speckle":
        raise ConfigError(f"expected a speckle stack, got kind {stack.kind!r}")
    unit = stack.extra.get("unit_pitch_um", stack.pitch_um)
    angles = stack.angles_deg or np.zeros(stack.count)
    return SpeckleEnsemble(stack.frames.astype(np.float64), stack.pitch_um, angles,
                           exposure=stack.exposure_s or 1.0, seed=stack.seed, unit_pitch=unit)


# --- subcommands ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _config(args)
    det = detector_of(cfg)
    a = cfg["angles"]
    angles = a.get("start_deg", 0.0) + sweep_angles(a["n"], a["step_deg"])
    seed = cfg["seed"]
    log.info("packing mask (seed %d)", seed)
    mask = generate_mask(mask_config(cfg), seed=seed)
    log.info("rendering %d frames of %dx%d", len(angles), det.width, det.height)
    ens = generate_ensemble(mask, angles, beam=beam_geometry(cfg), detector=det,
                            exposure=cfg["exposure"]["speckle_s"], noise=cfg["noise"], seed=seed + 1,
                            workers=_workers(args.threads), bin_factor=cfg["detector"].get("bin", 1))
    path = write_stack(_out(args) / "speckle", StackFile(
        ens.frames, ens.pitch, list(ens.angles), ens.exposure, seed, "speckle",
        {"unit_pitch_um": ens.unit_pitch, "packing_fraction": mask.achieved_fraction}))
    print(f"wrote={path}")
    print(f"frames={ens.n}")
    return 0


def cmd_measure(args) -> int:
    cfg = _config(args)
    ens = _ensemble(read_stack(args.speckle))
    g = cfg["grid"]
    grid = BucketGrid(g["rows"], g["cols"], g["zoom"])
    grid.check_tiles(ens.frames.shape)
    ph = cfg["phantom"]
    if ph["kind"] == "uniform":
        sample = Image2D(np.ones(ens.shape), ens.pitch)
    else:
        params = dict(ph.get("params", {}))
        if "holes" in params:
            params["holes"] = tuple((d, tuple(c)) for d, c in params["holes"])
        sample = phantom(ph["kind"], ens.shape, ens.pitch, **params)
    series = simulate_bucket_series(ens, sample, grid, noise=cfg["noise"],
                                    exposure=cfg["exposure"]["bucket_s"], seed=cfg["seed"] + 2,
                                    beam=beam_geometry(cfg))
    out = _out(args)
    write_bucket_csv(out / "buckets.csv", series.values, series.angles)
    write_stack(out / "buckets", StackFile(series.values, grid.pitch(ens.pitch), list(series.angles),
                                           series.exposure, cfg["seed"], "bucket",
                                           {"reference_exposure_s": series.reference_exposure,
                                            "zoom": grid.zoom}))
    write_stack(out / "phantom", StackFile(sample.values, sample.pitch, [], 0.0, cfg["seed"], "image"))
    print(f"buckets={series.n}x{grid.rows}x{grid.cols}")
    return 0


def _load_buckets(path, ens: SpeckleEnsemble, grid_arg) -> BucketSeries:
    p = Path(path)
    if p.suffix == ".csv":
        values, angles = read_bucket_csv(p)
        exposure = ref = 1.0
        if grid_arg:
            rows, cols = grid_arg
        else:
            rows = cols = int(round(np.sqrt(values.shape[1])))
        if rows * cols != values.shape[1]:
            raise ConfigError(f"bucket CSV has {values.shape[1]} columns, grid is {rows}x{cols}")
        values = values.reshape(-1, rows, cols)
    else:
        st = read_stack(p)
        if st.kind != "bucket":
            raise ConfigError(f"expected a bucket stack, got kind {st.kind!r}")
        values, angles = st.frames.astype(np.float64), np.asarray(st.angles_deg)
        exposure, ref = st.exposure_s, st.extra.get("reference_exposure_s", st.exposure_s)
        rows, cols = values.shape[1:]
        if grid_arg and tuple(grid_arg) != (rows, cols):
            raise ConfigError(f"--grid {grid_arg} does not match the bucket stack {rows}x{cols}")
    if values.shape[0] != ens.n:
        raise ConfigError(f"{values.shape[0]} bucket readings but {ens.n} speckle frames")
    h, w = ens.shape
    if h % rows or w % cols or h // rows != w // cols:
        raise ConfigError(f"a {rows}x{cols} bucket grid does not tile {h}x{w} frames into square blocks")
    grid = BucketGrid(rows, cols, h // rows)
    return BucketSeries(values, grid, angles, exposure, ref)


def cmd_reconstruct(args) -> int:
    if args.command == "superres" and not args.grid:
        raise ConfigError("superres needs --grid ROWS COLS")
    base = recon_config(load_config(args.config)) if args.config else ReconConfig()
    cfg = replace(
        base,
        method=args.method or base.method,
        iterations=args.iterations if args.iterations is not None else base.iterations,
        regularizer=args.regularizer or base.regularizer,
        regularizer_weight=args.weight if args.weight is not None else base.regularizer_weight,
        nonnegativity=args.nonneg or base.nonnegativity,
        absolute_level=args.absolute_level or base.absolute_level,
        deblock=args.deblock or base.deblock,
        step_size=args.step if args.step is not None else base.step_size,
    )
    ens = _ensemble(read_stack(args.speckle))
    series = _load_buckets(args.buckets, ens, args.grid)
    t0 = time.perf_counter()
    g = superres_reconstruct(ens, series, cfg, series.grid)
    wall = time.perf_counter() - t0
    out = _out(args)
    write_stack(out / "estimate", StackFile(g.estimate.values, g.estimate.pitch, [], 0.0, None, "image"))
    write_pgm(out / "estimate.pgm", g.estimate.values)
    if g.method == "ixc":
        write_residual_csv(out / "residual.csv", g.residual_history)
    print(f"method={g.method}")
    print(f"iterations={cfg.iterations if g.method == 'ixc' else 0}")
    print(f"grid={series.grid.rows}x{series.grid.cols}")
    print(f"shape={g.estimate.height}x{g.estimate.width}")
    print(f"wall_time_s={wall:.3f}")
    return 0


def cmd_analyze(args) -> int:
    m = args.metric
    if m == "snr":
        if args.kappa is None or args.n_masks is None or args.n_sample is None:
            raise ConfigError("snr needs --kappa, --n-masks and --n-sample")
        model = SNRModel(args.kappa, args.n_masks, args.n_sample, brightness=args.brightness, xi=args.xi)
        print(f"snr_high_brilliance={snr_predict(model, 'high_brilliance'):.6g}")
        if args.brightness is not None and args.xi is not None:
            print(f"snr_with_brightness={snr_predict(model, 'with_brightness'):.6g}")
        return 0
    if not args.input:
        raise ConfigError(f"metric {m} needs --input")
    a = read_stack(args.input[0])
    if m == "contrast":
        print(f"kappa={speckle_contrast(a.frames.astype(np.float64)):.6g}")
    elif m in ("psf", "fwhm"):
        psf = psf_autocovariance(_ensemble(a) if a.kind == "speckle" else a.frames.astype(np.float64),
                                 pitch=a.pitch_um)
        print(f"psf_fwhm_x_um={fwhm(central_profile(psf, 1), psf.pitch):.6g}")
        print(f"psf_fwhm_y_um={fwhm(central_profile(psf, 0), psf.pitch):.6g}")
    elif m == "frc":
        if len(args.input) != 2:
            raise ConfigError("frc needs two --input stacks")
        b = read_stack(args.input[1])
        curve = frc(Image2D(a.frames[0].astype(np.float64), a.pitch_um),
                    Image2D(b.frames[0].astype(np.float64), b.pitch_um), args.ring_width)
        print("radius_per_um,frc")
        for r, c in curve.as_rows():
            print(f"{r:.8g},{c:.8g}")
        try:
            f = frc_resolution(curve, args.threshold)
            print(f"# resolution_um={1.0 / f:.6g}")
        except ValueError as e:
            print(f"# resolution_um=none ({e})")
    return 0


def cmd_reproduce(args) -> int:
    out = _out(args)
    for name in args.experiment:
        res = experiments.run_experiment(name, args.scale, seed=args.seed or 0,
                                         workers=_workers(args.threads),
                                         compare_deblock=args.compare_deblock)
        experiments.write_artifacts(res, out / f"exp_{name}")
        print(json.dumps(res["summary"], sort_keys=True))
    return 0


# --- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ngi", description="Neutron ghost-imaging simulation and reconstruction.")
    p.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="JSON experiment config")
            sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                            help="override a config key, e.g. angles.n=64 (repeatable)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int, default=1, help="worker threads (0 = auto)")
        sp.add_argument("--out", default=".", help="output directory")

    sp = sub.add_parser("simulate", help="render a speckle ensemble")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("measure", help="bucket readings of a phantom")
    common(sp)
    sp.add_argument("--speckle", required=True, help="speckle stack (.json)")
    sp.set_defaults(func=cmd_measure)

    for name in ("reconstruct", "superres"):
        sp = sub.add_parser(name, help="ghost-image reconstruction" if name == "reconstruct"
                            else "alias of reconstruct with a required --grid")
        common(sp, config=False)
        sp.add_argument("--config", help="JSON config; only its recon section is used")
        sp.add_argument("--speckle", required=True)
        sp.add_argument("--buckets", required=True, help="bucket stack (.json) or CSV")
        sp.add_argument("--grid", type=int, nargs=2, metavar=("ROWS", "COLS"))
        sp.add_argument("--method", choices=["xc", "ixc"])
        sp.add_argument("--iterations", type=int)
        sp.add_argument("--step", type=float)
        sp.add_argument("--regularizer", choices=["none", "gradient_sparsity", "smoothness"])
        sp.add_argument("--weight", type=float)
        sp.add_argument("--nonneg", action="store_true")
        sp.add_argument("--absolute-level", action="store_true")
        sp.add_argument("--deblock", action="store_true")
        sp.set_defaults(func=cmd_reconstruct)

    sp = sub.add_parser("analyze", help="contrast, PSF width, FRC or SNR prediction")
    common(sp, config=False)
    sp.add_argument("--metric", required=True, choices=["contrast", "psf", "fwhm", "frc", "snr"])
    sp.add_argument("--input", action="append")
    sp.add_argument("--ring-width", type=int, default=1)
    sp.add_argument("--threshold", default="0.5")
    sp.add_argument("--kappa", type=float)
    sp.add_argument("--n-masks", type=float)
    sp.add_argument("--n-sample", type=float)
    sp.add_argument("--brightness", type=float)
    sp.add_argument("--xi", type=float)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("reproduce", help="run a synthetic experiment end to end")
    common(sp, config=False)
    sp.add_argument("--experiment", nargs="+", choices=sorted(experiments.EXPERIMENTS), required=True)
    sp.add_argument("--scale", type=float, default=1.0)
    sp.add_argument("--compare-deblock", action="store_true",
                    help="also run without deblocking and report harmonic energies")
    sp.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except NumericalError as e:
        print(f"ngi: numerical error: {e}", file=sys.stderr)
        return 2
    except (ConfigError, ValueError, OSError) as e:
        print(f"ngi: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
