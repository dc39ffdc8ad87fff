"""Forward measurement: bucket signals from speckle frames and a sample.

The sample plane coincides with the speckle plane, so a bucket is the
pixelwise product of frame and transmission summed over the bucket's
footprint. The pixel-area factor of the continuous integral is dropped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image import Image2D
from .mask import BeamGeometry, SpeckleEnsemble, frame_rng


def _as_values(x) -> np.ndarray:
    return x.values if isinstance(x, Image2D) else np.asarray(x, dtype=np.float64)


def transmission_map(values, pitch: float) -> Image2D:
    """Wrap ``values`` as a transmission image, checking 0 <= T <= 1."""
    img = Image2D(values, pitch)
    if img.values.min() < 0 or img.values.max() > 1:
        raise ValueError("transmission values must lie in [0, 1]")
    return img


@dataclass(frozen=True)
class BucketGrid:
    """Regular array of bucket pixels, each ``zoom`` x ``zoom`` speckle pixels."""

    rows: int
    cols: int
    zoom: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("bucket grid needs at least one bucket")
        if int(self.zoom) != self.zoom or self.zoom < 1:
            raise ValueError(f"zoom factor must be a positive integer, got {self.zoom}")

    @classmethod
    def single(cls, height: int, width: int) -> "BucketGrid":
        if height != width:
            raise ValueError("a single square bucket needs a square frame")
        return cls(1, 1, height)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def image_shape(self) -> tuple[int, int]:
        return (self.rows * self.zoom, self.cols * self.zoom)

    def pitch(self, speckle_pitch: float) -> float:
        return self.zoom * speckle_pitch

    def check_tiles(self, shape) -> None:
        if tuple(shape[-2:]) != self.image_shape:
            raise ValueError(
                f"a {self.rows}x{self.cols} grid of {self.zoom}-pixel buckets covers "
                f"{self.image_shape}, not the frame shape {tuple(shape[-2:])}"
            )


@dataclass
class BucketSeries:
    """Bucket readings, shape ``(N, rows, cols)``.

    ``values`` are expressed in the intensity units of the speckle ensemble
    scaled by ``exposure / reference_exposure``; divide by
    :attr:`exposure_ratio` (or use :meth:`normalized`) to compare with
    noiseless ``bucket_signal`` values.
    """

    values: np.ndarray
    grid: BucketGrid
    angles: np.ndarray
    exposure: float = 1.0
    reference_exposure: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None, None]
        if self.values.shape[1:] != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} does not match the grid {self.grid.shape}")
        self.angles = np.asarray(self.angles, dtype=np.float64).reshape(-1)
        if len(self.angles) != self.values.shape[0]:
            raise ValueError("one angle per bucket reading is required")
        if np.any(self.values < 0):
            raise ValueError("bucket values must be >= 0")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def exposure_ratio(self) -> float:
        return self.exposure / self.reference_exposure

    def normalized(self) -> np.ndarray:
        return self.values / self.exposure_ratio


def bucket_signal(frame, sample) -> float:
    """Total transmitted intensity, ``sum(I * T)``."""
    f = _as_values(frame)
    t = _as_values(sample)
    if f.shape != t.shape:
        raise ValueError(f"frame shape {f.shape} does not match sample shape {t.shape}")
    if isinstance(frame, Image2D) and isinstance(sample, Image2D) and frame.pitch != sample.pitch:
        raise ValueError(f"frame pitch {frame.pitch} does not match sample pitch {sample.pitch}")
    return float(np.sum(f * t))


def bucket_array_signals(frame, sample, grid: BucketGrid) -> np.ndarray:
    """Per-bucket-pixel ``sum(I * T)`` over each footprint; shape (rows, cols)."""
    f = _as_values(frame)
    t = _as_values(sample)
    if f.shape != t.shape:
        raise ValueError(f"frame shape {f.shape} does not match sample shape {t.shape}")
    grid.check_tiles(f.shape)
    z = grid.zoom
    return (f * t).reshape(grid.rows, z, grid.cols, z).sum(axis=(1, 3))


def ensemble_buckets(frames: np.ndarray, sample, grid: BucketGrid) -> np.ndarray:
    """Noiseless buckets for a whole frame stack, shape (N, rows, cols)."""
    t = _as_values(sample)
    grid.check_tiles(frames.shape)
    if frames.shape[1:] != t.shape:
        raise ValueError(f"frame shape {frames.shape[1:]} does not match sample shape {t.shape}")
    z = grid.zoom
    n = frames.shape[0]
    out = np.empty((n, grid.rows, grid.cols))
    # chunked to bound the temporary product
    step = max(1, 2**24 // t.size)
    for s in range(0, n, step):
        prod = frames[s:s + step] * t
        out[s:s + step] = prod.reshape(-1, grid.rows, z, grid.cols, z).sum(axis=(2, 4))
    return out


def simulate_bucket_series(ensemble: SpeckleEnsemble, sample, grid: BucketGrid | None = None,
                           noise: bool = False, exposure: float | None = None, seed: int = 0,
                           beam: BeamGeometry = BeamGeometry()) -> BucketSeries:
    """Bucket readings for every frame of ``ensemble``.

    Expected values are the noiseless buckets scaled by
    ``exposure / ensemble.exposure``. With ``noise`` the count
    ``values * ensemble.counts_scale(brightness)`` is Poisson sampled, one
    random stream per frame.
    """
    if grid is None:
        grid = BucketGrid.single(*ensemble.shape)
    if exposure is None:
        exposure = ensemble.exposure
    ratio = exposure / ensemble.exposure
    values = ensemble_buckets(ensemble.frames, sample, grid) * ratio
    if noise:
        scale = ensemble.counts_scale(beam.brightness)
        for j in range(values.shape[0]):
            values[j] = frame_rng(seed, j).poisson(values[j] * scale) / scale
    return BucketSeries(values, grid, ensemble.angles, exposure, ensemble.exposure)


# --- phantoms ---------------------------------------------------------------

DEFAULT_HOLES = ((5.0, (-3.0, -3.0)), (3.0, (3.4, -3.4)), (1.0, (2.6, 3.2)))


def _pixel_coords(shape, pitch_um, supersample):
    """Sub-pixel sample positions in mm, centred on the image, shape (h, w, s*s)."""
    h, w = shape
    p = pitch_um / 1000.0
    off = (np.arange(supersample) + 0.5) / supersample - 0.5
    ys = ((np.arange(h) - (h - 1) / 2)[:, None] + off[None, :]) * p
    xs = ((np.arange(w) - (w - 1) / 2)[:, None] + off[None, :]) * p
    y = ys[:, None, :, None]
    x = xs[None, :, None, :]
    return np.broadcast_arrays(x, y)


def cd_stencil(shape, pitch: float, holes=DEFAULT_HOLES, supersample: int = 4) -> Image2D:
    """Opaque sheet (T = 0) with open circular holes (T = 1).

    ``holes`` is a sequence of ``(diameter_mm, (x_mm, y_mm))`` with centres
    relative to the image centre (x to the right, y downwards). Edge pixels
    get their covered area fraction.
    """
    h, w = shape
    half_w = w * pitch / 2000.0
    half_h = h * pitch / 2000.0
    x, y = _pixel_coords(shape, pitch, supersample)
    inside = np.zeros(x.shape, dtype=bool)
    for diameter, (cx, cy) in holes:
        r = diameter / 2.0
        if abs(cx) + r > half_w or abs(cy) + r > half_h:
            raise ValueError(
                f"hole of diameter {diameter} mm at ({cx}, {cy}) mm does not fit in the "
                f"{2 * half_w:.2f} x {2 * half_h:.2f} mm field of view"
            )
        inside |= (x - cx) ** 2 + (y - cy) ** 2 <= r * r
    return Image2D(inside.mean(axis=(2, 3)), pitch)


def resolution_star(shape, pitch: float, diameter: float = 20.0, spokes: int = 128,
                    spoke_width_deg: float = 1.4, center=(0.0, 0.0), quadrant: bool = False,
                    supersample: int = 4) -> Image2D:
    """Siemens-star target: ``spokes`` opaque radial lines on a clear background.

    With ``quadrant`` the star centre is placed at the top-left image corner
    so the field of view shows one quadrant; otherwise ``center`` (mm,
    relative to the image centre) is used.
    """
    h, w = shape
    if quadrant:
        center = (-w * pitch / 2000.0, -h * pitch / 2000.0)
    cx, cy = center
    x, y = _pixel_coords(shape, pitch, supersample)
    dx = x - cx
    dy = y - cy
    r = np.hypot(dx, dy)
    ang = np.degrees(np.arctan2(dy, dx)) % 360.0
    period = 360.0 / spokes
    on_line = (ang % period) < spoke_width_deg
    opaque = on_line & (r <= diameter / 2.0)
    return Image2D(1.0 - opaque.mean(axis=(2, 3)), pitch)


def phantom(kind: str, shape, pitch: float, **params) -> Image2D:
    if kind == "cd_stencil":
        return cd_stencil(shape, pitch, **params)
    if kind == "resolution_star":
        return resolution_star(shape, pitch, **params)
    raise ValueError(f"unknown phantom kind {kind!r}")


def star_edge_spacing(diameter: float = 20.0, spokes: int = 128) -> float:
    """Distance between successive line edges on the star rim, in mm."""
    return np.pi * diameter / (2 * spokes)
