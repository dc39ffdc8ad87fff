"""Image containers and grid operations shared by the rest of the package.

Pitches are in micrometres throughout. Values are always held as float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

FWHM_PER_SIGMA = 2.0 * np.sqrt(2.0 * np.log(2.0))  # 2.3548...


def sigma_to_fwhm(sigma):
    return sigma * FWHM_PER_SIGMA


def fwhm_to_sigma(fwhm):
    return fwhm / FWHM_PER_SIGMA


@dataclass(frozen=True)
class Image2D:
    """A rectangular grid of real values with a physical pixel pitch.

    Parameters
    ----------
    values : array_like
        2D array, shape ``(height, width)``. Copied to float64.
    pitch : float
        Pixel pitch in micrometres.
    """

    values: np.ndarray
    pitch: float

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"Image2D needs a 2D array, got shape {values.shape}")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError("Image2D needs width >= 1 and height >= 1")
        if not np.all(np.isfinite(values)):
            raise ValueError("Image2D values must be finite")
        if not self.pitch > 0:
            raise ValueError(f"pitch must be positive, got {self.pitch}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "pitch", float(self.pitch))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def with_values(self, values) -> "Image2D":
        return Image2D(values, self.pitch)


@dataclass(frozen=True)
class RegionSpec:
    origin_row: int
    origin_col: int
    rows: int
    cols: int

    def check_inside(self, height: int, width: int) -> None:
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"region must have positive size, got {self.rows}x{self.cols}")
        if (
            self.origin_row < 0
            or self.origin_col < 0
            or self.origin_row + self.rows > height
            or self.origin_col + self.cols > width
        ):
            raise ValueError(
                f"region rows {self.origin_row}:{self.origin_row + self.rows}, "
                f"cols {self.origin_col}:{self.origin_col + self.cols} "
                f"lies outside a {height}x{width} image"
            )

    @property
    def slices(self) -> tuple[slice, slice]:
        return (
            slice(self.origin_row, self.origin_row + self.rows),
            slice(self.origin_col, self.origin_col + self.cols),
        )

    def compose(self, inner: "RegionSpec") -> "RegionSpec":
        """Region of ``inner`` (relative to this region) in parent coordinates."""
        inner.check_inside(self.rows, self.cols)
        return RegionSpec(
            self.origin_row + inner.origin_row,
            self.origin_col + inner.origin_col,
            inner.rows,
            inner.cols,
        )


def centered_region(height: int, width: int, rows: int, cols: int) -> RegionSpec:
    return RegionSpec((height - rows) // 2, (width - cols) // 2, rows, cols)


def bin_array(values: np.ndarray, factor: int) -> np.ndarray:
    """Sum-bin the last two axes of ``values`` by ``factor``."""
    if int(factor) != factor or factor < 1:
        raise ValueError(f"bin factor must be a positive integer, got {factor}")
    factor = int(factor)
    *lead, h, w = values.shape
    if h % factor:
        raise ValueError(f"height {h} is not divisible by bin factor {factor}")
    if w % factor:
        raise ValueError(f"width {w} is not divisible by bin factor {factor}")
    if factor == 1:
        return np.array(values, dtype=np.float64)
    blocks = values.reshape(*lead, h // factor, factor, w // factor, factor)
    return blocks.sum(axis=(-3, -1), dtype=np.float64)


def bin(img: Image2D, factor: int) -> Image2D:
    """Sum-bin an image: each output pixel is the sum of a factor x factor block."""
    return Image2D(bin_array(img.values, factor), img.pitch * factor)


def crop(img: Image2D, region: RegionSpec) -> Image2D:
    region.check_inside(img.height, img.width)
    return Image2D(img.values[region.slices], img.pitch)


def gaussian_blur(img: Image2D, sigma: float) -> Image2D:
    """Convolve with a normalized Gaussian of standard deviation ``sigma`` (µm).

    Boundaries are reflected, which keeps the total sum unchanged.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return img
    return img.with_values(blur_array(img.values, sigma / img.pitch))


def blur_array(values: np.ndarray, sigma_px: float) -> np.ndarray:
    """Reflective Gaussian blur over the last two axes, sigma in pixels."""
    if sigma_px == 0:
        return np.array(values, dtype=np.float64)
    sigma = [0.0] * (values.ndim - 2) + [sigma_px, sigma_px]
    return ndimage.gaussian_filter(
        np.asarray(values, dtype=np.float64), sigma, mode="reflect", truncate=5.0
    )


def harmonic_notch_mask(shape: tuple[int, int], period: float, notch_halfwidth: int = 1) -> np.ndarray:
    """Boolean mask over the (unshifted) 2D DFT grid marking the notch bins.

    A bin is notched when its frequency index along either axis lies within
    ``notch_halfwidth - 1`` bins of a nonzero harmonic of ``1/period``, so a
    half-width of 1 removes exactly the harmonic bin. Lines are full width
    along the other axis, giving a cross-shaped set. DC is never notched.
    """
    h, w = shape
    if period < 2:
        raise ValueError(f"period must be >= 2 pixels, got {period}")
    if period > h or period > w:
        raise ValueError(f"period {period} is larger than the image ({h}x{w})")
    if notch_halfwidth < 1:
        raise ValueError("notch_halfwidth must be >= 1")

    def axis_hits(n):
        k = np.fft.fftfreq(n) * n  # signed integer bin index
        spacing = n / period
        m = np.round(k / spacing)
        hit = (m != 0) & (np.abs(k - m * spacing) < notch_halfwidth - 0.5 + 1e-9)
        return hit

    rows = axis_hits(h)
    cols = axis_hits(w)
    mask = rows[:, None] | cols[None, :]
    mask[0, 0] = False
    return mask


def notch_filter_array(values: np.ndarray, period: float, notch_halfwidth: int = 1) -> np.ndarray:
    mask = harmonic_notch_mask(values.shape[-2:], period, notch_halfwidth)
    spectrum = np.fft.fft2(values)
    spectrum[..., mask] = 0.0
    return np.fft.ifft2(spectrum).real


def fft_notch_filter(img: Image2D, period: float, notch_halfwidth: int = 1) -> Image2D:
    """Suppress structure repeating every ``period`` pixels (blocking artifacts).

    Uses a periodic FFT; the notch set is symmetric, so the output is real.
    """
    return img.with_values(notch_filter_array(img.values, period, notch_halfwidth))


def harmonic_energy(values: np.ndarray, period: float, notch_halfwidth: int = 1) -> float:
    """Spectral energy inside the notch set of ``harmonic_notch_mask``."""
    mask = harmonic_notch_mask(values.shape, period, notch_halfwidth)
    spectrum = np.fft.fft2(values)
    return float(np.sum(np.abs(spectrum[mask]) ** 2))


def block_boundary_energy(values: np.ndarray, period: int) -> float:
    """Sum of squared differences across rows/columns at multiples of ``period``."""
    values = np.asarray(values, dtype=np.float64)
    h, w = values.shape
    rows = np.arange(period, h, period)
    cols = np.arange(period, w, period)
    e = np.sum((values[rows] - values[rows - 1]) ** 2)
    e += np.sum((values[:, cols] - values[:, cols - 1]) ** 2)
    return float(e)
