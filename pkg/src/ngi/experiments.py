"""Synthetic analogues of the four ghost-imaging experiments.

(a) plain ghost imaging of a 1 mm hole with one 2.57 mm bucket;
(b)-(d) super-resolution on a 13.16 mm field with 8x8, 16x16 and 32x32
bucket arrays (zoom 32, 16 and 8), imaging a hole stencil (b) and one
quadrant of a Siemens star (c, d).

Speckle frames are rendered at the 25.7 µm native pitch and, for (b)-(d),
sum-binned by two. Buckets come from the noiseless frames and are then
Poisson sampled at the bucket exposure; the frames handed to the
reconstruction carry their own counting noise at the speckle exposure.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .analysis import ncc
from .image import Image2D, blur_array, harmonic_energy
from .io import StackFile, write_pgm, write_residual_csv, write_stack
from .mask import (BeamGeometry, Detector, MaskConfig, SpeckleEnsemble, add_counting_noise,
                   frame_rng, generate_ensemble, generate_mask, sweep_angles,
                   speckle_contrast)
from .measurement import BucketGrid, cd_stencil, resolution_star, simulate_bucket_series
from .recon import ReconConfig, superres_reconstruct

log = logging.getLogger(__name__)

NATIVE_PITCH = 25.7  # µm
TARGET_BLUR = 103.0  # µm, resolution used for the target column
N_FRAMES = 1716
STEP_DEG = 0.21
SPECKLE_EXPOSURE = 40.0
BUCKET_EXPOSURE = 5.0
COLUMNS = ("conventional", "xc", "ixc", "regularized", "target")


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    grid: int  # buckets per side
    zoom: int
    bin_factor: int  # native pixels per speckle pixel
    phantom: str
    regularizer: str
    regularizer_weight: float
    deblock: bool
    iterations: int = 128

    @property
    def pitch(self) -> float:
        return NATIVE_PITCH * self.bin_factor

    @property
    def side(self) -> int:
        return self.grid * self.zoom


EXPERIMENTS = {
    "a": ExperimentSpec("a", 1, 100, 1, "cd_stencil", "gradient_sparsity", 0.02, False),
    "b": ExperimentSpec("b", 8, 32, 2, "cd_stencil", "gradient_sparsity", 0.02, False),
    "c": ExperimentSpec("c", 16, 16, 2, "resolution_star", "smoothness", 0.1, True),
    "d": ExperimentSpec("d", 32, 8, 2, "resolution_star", "smoothness", 0.1, True),
}


def scaled(spec: ExperimentSpec, scale: float) -> tuple[ExperimentSpec, int]:
    """Shrink the detector and the frame count together.

    For (a) the single bucket shrinks; for (b)-(d) the number of buckets
    per side shrinks and the zoom is kept. Returns the spec and N.
    """
    if not 0 < scale <= 1:
        raise ValueError(f"scale must lie in (0, 1], got {scale}")
    n = max(2, int(round(N_FRAMES * scale)))
    if spec.grid == 1:
        return replace(spec, zoom=max(2, int(round(spec.zoom * scale)))), n
    return replace(spec, grid=max(1, int(round(spec.grid * scale)))), n


def ground_truth(spec: ExperimentSpec) -> Image2D:
    """Phantom on the speckle grid; hole layouts scale with the field of view."""
    shape = (spec.side, spec.side)
    fov = spec.side * spec.pitch / 1000.0
    if spec.name == "a":
        return cd_stencil(shape, spec.pitch, holes=((fov / 2.57, (0.0, 0.0)),))
    if spec.phantom == "cd_stencil":
        s = fov / 13.1584
        holes = tuple((d * s, (x * s, y * s)) for d, (x, y) in
                      ((5.0, (-3.0, -3.0)), (3.0, (3.4, -3.4)), (1.0, (2.6, 3.2))))
        return cd_stencil(shape, spec.pitch, holes=holes)
    return resolution_star(shape, spec.pitch, quadrant=True)


def conventional_image(ensemble: SpeckleEnsemble, series, grid: BucketGrid) -> np.ndarray:
    """Flat-field-corrected bucket image, upsampled to the speckle grid."""
    z = grid.zoom
    flat = ensemble.frames.reshape(ensemble.n, grid.rows, z, grid.cols, z).sum(axis=(2, 4)).mean(axis=0)
    t = series.normalized().mean(axis=0) / flat
    return np.kron(t, np.ones((z, z)))


def _safe_ncc(a, b):
    # a single-bucket conventional image is constant: no defined correlation
    if np.ptp(a) <= 1e-12 * np.abs(a).max():
        return None
    return ncc(a, b)


def run_experiment(name: str, scale: float = 1.0, seed: int = 0, n_frames: int | None = None,
                   workers: int = 1, compare_deblock: bool = False) -> dict:
    """Simulate, measure and reconstruct one experiment.

    Returns a dict with the five column images, reconstruction objects,
    the ensemble-level metrics and a JSON-ready ``summary``.
    """
    if name not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {name!r}; choose from {sorted(EXPERIMENTS)}")
    spec, n = scaled(EXPERIMENTS[name], scale)
    if n_frames is not None:
        n = n_frames
    beam = BeamGeometry()
    t0 = time.perf_counter()

    mask = generate_mask(MaskConfig(), seed=seed)
    native = spec.side * spec.bin_factor
    detector = Detector(native, native, NATIVE_PITCH)
    angles = sweep_angles(n, STEP_DEG)
    log.info("experiment %s: %d frames of %dx%d", name, n, native, native)
    ens = generate_ensemble(mask, angles, beam=beam, detector=detector, exposure=SPECKLE_EXPOSURE,
                            noise=False, workers=workers, bin_factor=spec.bin_factor)

    truth = ground_truth(spec)
    grid = BucketGrid(spec.grid, spec.grid, spec.zoom)
    series = simulate_bucket_series(ens, truth, grid, noise=True, exposure=BUCKET_EXPOSURE,
                                    seed=seed + 2, beam=beam)
    # the recorded speckle frames carry their own counting noise
    scale_counts = ens.counts_scale(beam.brightness)
    for j in range(ens.n):
        ens.frames[j] = add_counting_noise(ens.frames[j], scale_counts, frame_rng(seed + 1, j))
    kappa = speckle_contrast(ens.frames[:64])

    base = ReconConfig(iterations=spec.iterations, absolute_level=True)
    xc = superres_reconstruct(ens, series, replace(base, method="xc", deblock=spec.deblock), grid)
    ixc = superres_reconstruct(ens, series, replace(base, method="ixc"), grid)
    reg_cfg = replace(base, method="ixc", regularizer=spec.regularizer,
                      regularizer_weight=spec.regularizer_weight, nonnegativity=True,
                      deblock=spec.deblock)
    reg = superres_reconstruct(ens, series, reg_cfg, grid)

    target = blur_array(truth.values, TARGET_BLUR / spec.pitch)
    columns = {
        "conventional": conventional_image(ens, series, grid),
        "xc": xc.estimate.values,
        "ixc": ixc.estimate.values,
        "regularized": reg.estimate.values,
        "target": target,
    }
    summary = {
        "experiment": name,
        "scale": scale,
        "seed": seed,
        "n_frames": n,
        "bucket_grid": [spec.grid, spec.grid],
        "zoom": spec.zoom,
        "image_shape": [spec.side, spec.side],
        "pitch_um": spec.pitch,
        "bucket_pitch_um": spec.pitch * spec.zoom,
        "mask_packing_fraction": round(mask.achieved_fraction, 6),
        "speckle_contrast": round(kappa, 6),
        "regularizer": spec.regularizer,
        "deblock": spec.deblock,
        "ncc": {k: (None if v is None else round(v, 6))
                for k, v in ((c, _safe_ncc(columns[c], target)) for c in COLUMNS[:4])},
    }
    out = {"spec": spec, "columns": columns, "summary": summary, "truth": truth,
           "ixc": ixc, "regularized": reg, "ensemble": ens, "series": series, "grid": grid}

    if compare_deblock and spec.deblock:
        plain = superres_reconstruct(ens, series, replace(reg_cfg, deblock=False), grid)
        e0 = harmonic_energy(plain.estimate.values, spec.zoom)
        e1 = harmonic_energy(reg.estimate.values, spec.zoom)
        summary["harmonic_energy"] = {"without_deblock": e0, "with_deblock": e1,
                                      "reduction": 1.0 - e1 / e0 if e0 > 0 else 0.0}
        summary["ncc"]["regularized_no_deblock"] = round(_safe_ncc(plain.estimate.values, target), 6)
        out["plain"] = plain
    log.info("experiment %s done in %.1f s", name, time.perf_counter() - t0)
    return out


def write_artifacts(result: dict, out_dir) -> Path:
    """Columns as one image stack plus PGMs, residual CSVs and summary.json.

    Nothing time-dependent is written, so reruns are byte-identical.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = result["spec"]
    cols = np.stack([result["columns"][c] for c in COLUMNS])
    write_stack(out / "columns", StackFile(cols, spec.pitch, [], BUCKET_EXPOSURE,
                                           result["summary"]["seed"], "image",
                                           {"columns": list(COLUMNS)}))
    for c in COLUMNS:
        write_pgm(out / f"{c}.pgm", result["columns"][c])
    for key in ("ixc", "regularized"):
        g = result[key]
        write_residual_csv(out / f"residual_{key}.csv", g.residual_history, g.initial_misfit)
    (out / "summary.json").write_text(json.dumps(result["summary"], indent=1, sort_keys=True) + "\n")
    return out
