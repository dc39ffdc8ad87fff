"""Rotating granular mask model and speckle-ensemble generation.

The mask is an annular cylinder of absorbing spherical grains whose axis
runs along the detector's vertical (row) direction. The beam travels along
z. Each detector pixel samples a parallel ray; attenuation follows
Beer-Lambert with exact chord lengths through each sphere. The frame is then
blurred by the penumbra of the finite source.

Lengths in the mask model are in millimetres; image pitches in micrometres.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .image import Image2D, RegionSpec, bin_array, blur_array

# Poisson sampling on a per-frame stream: SeedSequence((seed, frame_index)).


@dataclass(frozen=True)
class MaskConfig:
    """Construction parameters of the granular cylinder (lengths in mm).

    ``grain_attenuation`` and ``packing_fraction`` are not reported for the
    real salt mask; the defaults give a speckle contrast near 0.31.
    """

    inner_radius: float = 20.0
    outer_radius: float = 30.0
    axial_length: float = 16.0
    grain_diameter: float = 1.3
    grain_jitter: float = 0.2
    packing_fraction: float = 0.35
    grain_attenuation: float = 0.12
    wall_attenuation: float = 0.01
    wall_thickness: float = 1.0
    overlap_tolerance: float = 0.0
    max_attempts: int = 20_000_000


@dataclass(frozen=True)
class GrainMask:
    config: MaskConfig
    centers: np.ndarray  # (G, 3) as (x, axial y, z), mm
    radii: np.ndarray  # (G,), mm
    seed: int
    achieved_fraction: float

    @property
    def inner_radius(self):
        return self.config.inner_radius

    @property
    def outer_radius(self):
        return self.config.outer_radius

    @property
    def n_grains(self) -> int:
        return len(self.radii)

    def wall_optical_depth(self) -> float:
        # Two layers (entry and exit side), each crossing an inner and an
        # outer wall; walls treated as slabs at normal incidence.
        c = self.config
        return 2.0 * c.wall_attenuation * 2.0 * c.wall_thickness


@dataclass(frozen=True)
class BeamGeometry:
    source_distance: float = 9.8  # m
    pinhole_diameter: float = 9.8  # mm
    mask_to_detector: float = 150.0  # mm
    brightness: float = 9.0e6  # n cm^-2 s^-1

    def __post_init__(self):
        if self.source_distance <= 0 or self.pinhole_diameter <= 0:
            raise ValueError("source distance and pinhole diameter must be positive")
        if self.mask_to_detector < 0:
            raise ValueError("mask_to_detector must be >= 0")

    @property
    def divergence(self) -> float:
        return self.pinhole_diameter / (self.source_distance * 1000.0)

    @property
    def penumbra_sigma_um(self) -> float:
        return self.mask_to_detector * self.divergence * 1000.0


@dataclass(frozen=True)
class Detector:
    width: int
    height: int
    pitch: float  # µm

    @property
    def pixel_area_cm2(self) -> float:
        return (self.pitch * 1e-4) ** 2


@dataclass
class SpeckleEnsemble:
    """Stack of speckle frames, shape ``(N, height, width)``.

    ``exposure`` is the per-frame exposure in seconds, used as the reference
    when scaling bucket counts. ``unit_pitch`` is the pixel pitch at which an
    intensity of 1 means the open-beam flux; it stays at the detector pitch
    when frames are sum-binned.
    """

    frames: np.ndarray
    pitch: float
    angles: np.ndarray
    axial_offsets: np.ndarray = None
    exposure: float = 1.0
    seed: int | None = None
    meta: dict = field(default_factory=dict)
    unit_pitch: float | None = None

    def __post_init__(self):
        if self.unit_pitch is None:
            self.unit_pitch = self.pitch
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[0] < 1:
            raise ValueError(f"frames must have shape (N, H, W) with N >= 1, got {self.frames.shape}")
        n = self.frames.shape[0]
        self.angles = np.asarray(self.angles, dtype=np.float64).reshape(-1)
        if self.axial_offsets is None:
            self.axial_offsets = np.zeros(n)
        self.axial_offsets = np.asarray(self.axial_offsets, dtype=np.float64).reshape(-1)
        if len(self.angles) != n or len(self.axial_offsets) != n:
            raise ValueError("one angle and one axial offset per frame are required")
        if np.any(self.frames < 0):
            raise ValueError("speckle intensities must be >= 0")

    def __len__(self):
        return self.frames.shape[0]

    @property
    def n(self) -> int:
        return self.frames.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames.shape[1:]

    def frame(self, j: int) -> Image2D:
        return Image2D(self.frames[j], self.pitch)

    def mean_frame(self) -> Image2D:
        return Image2D(self.frames.mean(axis=0), self.pitch)

    def subset(self, n: int) -> "SpeckleEnsemble":
        return SpeckleEnsemble(
            self.frames[:n], self.pitch, self.angles[:n], self.axial_offsets[:n],
            self.exposure, self.seed, dict(self.meta), self.unit_pitch,
        )

    def binned(self, factor: int) -> "SpeckleEnsemble":
        return SpeckleEnsemble(
            bin_array(self.frames, factor), self.pitch * factor, self.angles,
            self.axial_offsets, self.exposure, self.seed, dict(self.meta), self.unit_pitch,
        )

    def cropped(self, region: RegionSpec) -> "SpeckleEnsemble":
        region.check_inside(*self.shape)
        rs, cs = region.slices
        return SpeckleEnsemble(
            self.frames[:, rs, cs], self.pitch, self.angles, self.axial_offsets,
            self.exposure, self.seed, dict(self.meta), self.unit_pitch,
        )

    def counts_scale(self, brightness: float, exposure: float | None = None) -> float:
        """Expected counts per unit of frame intensity."""
        t = self.exposure if exposure is None else exposure
        return brightness * (self.unit_pitch * 1e-4) ** 2 * t


class PackingError(RuntimeError):
    def __init__(self, target, achieved):
        super().__init__(
            f"could not reach packing fraction {target:.3f}; achieved {achieved:.4f}"
        )
        self.target = target
        self.achieved = achieved


def annulus_volume(config: MaskConfig) -> float:
    return math.pi * (config.outer_radius**2 - config.inner_radius**2) * config.axial_length


def generate_mask(config: MaskConfig = MaskConfig(), seed: int = 0, batch: int = 20000) -> GrainMask:
    """Pack grains into the annulus by random sequential addition.

    Grain radii are drawn uniformly within ``±grain_jitter`` of the nominal
    radius. Grains are added until their total volume reaches the target
    packing fraction; if that takes more than ``config.max_attempts``
    candidates a :class:`PackingError` reports the fraction reached.
    """
    c = config
    if not c.inner_radius < c.outer_radius:
        raise ValueError("inner_radius must be smaller than outer_radius")
    if not 0 <= c.packing_fraction <= 0.55:
        raise ValueError(f"packing fraction must lie in [0, 0.55], got {c.packing_fraction}")
    r_nom = c.grain_diameter / 2.0
    r_max = r_nom * (1 + c.grain_jitter)
    if 2 * r_max > c.outer_radius - c.inner_radius or 2 * r_max > c.axial_length:
        raise ValueError("grains do not fit inside the annulus")

    vol = annulus_volume(c)
    target = c.packing_fraction * vol
    r_min = r_nom * (1 - c.grain_jitter)
    capacity = int(target / (4 / 3 * math.pi * r_min**3)) + 2
    centers = np.zeros((capacity, 3))
    radii = np.zeros(capacity)
    if target == 0:
        return GrainMask(c, centers[:0], radii[:0], seed, 0.0)

    cell = 2.0 * r_max
    lo = np.array([-c.outer_radius, -c.axial_length / 2, -c.outer_radius])
    span = np.array([2 * c.outer_radius, c.axial_length, 2 * c.outer_radius])
    dims = np.maximum(np.ceil(span / cell).astype(np.int64), 1)
    head = np.full(int(np.prod(dims)), -1, dtype=np.int64)
    nxt = np.full(capacity, -1, dtype=np.int64)
    state = np.zeros(2)

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6d61736b]))
    attempts = 0
    while state[1] < target and attempts < c.max_attempts:
        m = min(batch, c.max_attempts - attempts)
        r = r_nom * (1 + c.grain_jitter * rng.uniform(-1, 1, m))
        rin = c.inner_radius + r
        rout = c.outer_radius - r
        rho = np.sqrt(rin**2 + rng.random(m) * (rout**2 - rin**2))
        phi = rng.uniform(0, 2 * np.pi, m)
        y = rng.uniform(-1, 1, m) * (c.axial_length / 2 - r)
        cands = np.column_stack([rho * np.cos(phi), y, rho * np.sin(phi), r])
        attempts += _kernels.rsa_add(
            cands, c.overlap_tolerance, target, lo, cell, dims, head, nxt, centers, radii, state
        )
    n = int(state[0])
    achieved = state[1] / vol
    if achieved < c.packing_fraction - 0.02:
        raise PackingError(c.packing_fraction, achieved)
    return GrainMask(c, centers[:n].copy(), radii[:n].copy(), seed, achieved)


def _check_fov(mask: GrainMask, detector: Detector, axial_offset: float) -> None:
    fov_x = detector.width * detector.pitch / 1000.0
    if fov_x >= 2 * mask.inner_radius:
        raise ValueError(
            f"detector field of view {fov_x:.2f} mm is not narrower than the inner "
            f"diameter {2 * mask.inner_radius:.2f} mm; speckle statistics would vary across it"
        )
    fov_y = detector.height * detector.pitch / 1000.0
    if abs(axial_offset) + fov_y / 2 > mask.config.axial_length / 2:
        raise ValueError(
            f"axial field of view ({fov_y:.2f} mm at offset {axial_offset} mm) exceeds the "
            f"mask length {mask.config.axial_length} mm"
        )


def optical_depth(mask: GrainMask, angle: float, axial_offset: float, detector: Detector,
                  margin: int = 0) -> np.ndarray:
    """Line integral of attenuation for each pixel, optionally with a margin."""
    theta = math.radians(angle)
    x = mask.centers[:, 0] * math.cos(theta) + mask.centers[:, 2] * math.sin(theta)
    y = mask.centers[:, 1] + axial_offset
    p = detector.pitch / 1000.0
    h = detector.height + 2 * margin
    w = detector.width + 2 * margin
    u = x / p + (w - 1) / 2.0
    v = y / p + (h - 1) / 2.0
    rp = mask.radii / p
    keep = (u + rp >= 0) & (u - rp <= w - 1) & (v + rp >= 0) & (v - rp <= h - 1)
    depth = np.zeros((h, w))
    weight = np.full(int(keep.sum()), mask.config.grain_attenuation * p)
    _kernels.splat_chords(u[keep], v[keep], rp[keep], weight, depth)
    depth += mask.wall_optical_depth()
    return depth


def _project(mask, angle, axial_offset, beam, detector) -> np.ndarray:
    sigma_px = beam.penumbra_sigma_um / detector.pitch
    margin = int(math.ceil(5 * sigma_px))
    frame = np.exp(-optical_depth(mask, angle, axial_offset, detector, margin))
    if sigma_px > 0:
        frame = blur_array(frame, sigma_px)
    if margin:
        frame = frame[margin:-margin, margin:-margin]
    return frame


def project_mask(mask: GrainMask, angle: float, axial_offset: float = 0.0,
                 beam: BeamGeometry = BeamGeometry(), detector: Detector = Detector(256, 256, 51.4)) -> Image2D:
    """Noiseless transmitted intensity behind the mask at one position.

    The frame is rendered with a margin wide enough that the penumbral blur
    sees real mask structure rather than a boundary condition.
    """
    _check_fov(mask, detector, axial_offset)
    return Image2D(_project(mask, angle, axial_offset, beam, detector), detector.pitch)


def frame_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def counts_per_unit(beam: BeamGeometry, detector: Detector, exposure: float) -> float:
    """Expected neutron count of an unattenuated pixel over ``exposure`` seconds."""
    return beam.brightness * detector.pixel_area_cm2 * exposure


def add_counting_noise(frame: np.ndarray, scale: float, rng: np.random.Generator,
                       gamma_probability: float = 0.0) -> np.ndarray:
    """Poisson-sample ``frame * scale`` counts and return them in frame units."""
    noisy = rng.poisson(frame * scale) / scale
    if gamma_probability > 0:
        hit = rng.random(frame.shape) < gamma_probability
        level = max(float(frame.max()), 1.0 / scale)
        noisy[hit] = level * (10.0 + rng.exponential(10.0, int(hit.sum())))
    return noisy


def generate_ensemble(mask: GrainMask, angles, axial_offsets=None, beam: BeamGeometry = BeamGeometry(),
                      detector: Detector = Detector(256, 256, 51.4), exposure: float = 40.0,
                      noise: bool = False, seed: int = 0, gamma_probability: float = 0.0,
                      workers: int = 1, bin_factor: int = 1) -> SpeckleEnsemble:
    """Project the mask at each position, optionally with counting noise.

    Each frame draws from its own random stream derived from
    ``(seed, frame index)``, so the result does not depend on ``workers``.
    ``bin_factor`` sum-bins every frame right after it is made, which keeps
    memory at the binned size.
    """
    angles = np.asarray(angles, dtype=np.float64).reshape(-1)
    if len(angles) == 0:
        raise ValueError("at least one mask position is required")
    if axial_offsets is None:
        axial_offsets = np.zeros_like(angles)
    axial_offsets = np.asarray(axial_offsets, dtype=np.float64).reshape(-1)
    if axial_offsets.shape != angles.shape:
        raise ValueError("axial_offsets must match angles")
    for off in np.unique(axial_offsets):
        _check_fov(mask, detector, off)

    scale = counts_per_unit(beam, detector, exposure)
    if detector.height % bin_factor or detector.width % bin_factor:
        raise ValueError(f"detector {detector.height}x{detector.width} is not divisible by {bin_factor}")
    frames = np.empty((len(angles), detector.height // bin_factor, detector.width // bin_factor))

    def work(j):
        f = _project(mask, angles[j], axial_offsets[j], beam, detector)
        if noise:
            f = add_counting_noise(f, scale, frame_rng(seed, j), gamma_probability)
        frames[j] = bin_array(f, bin_factor) if bin_factor > 1 else f

    if workers == 1:
        for j in range(len(angles)):
            work(j)
    else:
        with ThreadPoolExecutor(max_workers=workers or None) as pool:
            list(pool.map(work, range(len(angles))))
    return SpeckleEnsemble(frames, detector.pitch * bin_factor, angles, axial_offsets, exposure,
                           seed, unit_pitch=detector.pitch)


def sweep_angles(n: int = 1716, step: float = 0.21) -> np.ndarray:
    return np.arange(n) * step


def speckle_contrast(frames, percentile: float = 1.0) -> float:
    """Percentile-robust Michelson visibility of the pooled pixel values.

    ``frames`` may be a :class:`SpeckleEnsemble`, an :class:`Image2D` or an
    array. Uses the ``percentile`` and ``100 - percentile`` quantiles in
    place of the extremes so isolated outliers do not dominate.
    """
    if isinstance(frames, SpeckleEnsemble):
        values = frames.frames
    elif isinstance(frames, Image2D):
        values = frames.values
    else:
        values = np.asarray(frames, dtype=np.float64)
    if np.any(values < 0):
        raise ValueError("intensities must be nonnegative")
    lo, hi = np.percentile(values, [percentile, 100.0 - percentile])
    if hi + lo <= 0:
        raise ValueError("contrast is undefined for an all-zero ensemble")
    return float((hi - lo) / (hi + lo))
