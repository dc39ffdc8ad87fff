"""Resolution and image-quality metrics.

Spatial frequencies are in cycles per micrometre. A frequency ``f`` is
quoted as a resolution length ``1/f`` (so 0.004 µm^-1 reads as 250 µm).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image import Image2D


@dataclass(frozen=True)
class FRCCurve:
    radii: np.ndarray  # µm^-1
    correlation: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.radii) <= 0):
            raise ValueError("ring radii must be strictly increasing")

    def as_rows(self):
        return np.column_stack([self.radii, self.correlation])


def _pair(a, b):
    va = a.values if isinstance(a, Image2D) else np.asarray(a, dtype=np.float64)
    vb = b.values if isinstance(b, Image2D) else np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise ValueError(f"image shapes differ: {va.shape} vs {vb.shape}")
    pa = a.pitch if isinstance(a, Image2D) else 1.0
    pb = b.pitch if isinstance(b, Image2D) else 1.0
    if pa != pb:
        raise ValueError(f"image pitches differ: {pa} vs {pb}")
    return va, vb, pa


def frc(a, b, ring_width: int = 1) -> FRCCurve:
    """Fourier ring correlation of two images.

    Rings are ``ring_width`` frequency bins wide (bins of the longer axis)
    and run from DC up to Nyquist.
    """
    va, vb, pitch = _pair(a, b)
    if ring_width < 1:
        raise ValueError("ring_width must be >= 1")
    h, w = va.shape
    n = max(h, w)
    fy = np.fft.fftfreq(h)[:, None] * n
    fx = np.fft.fftfreq(w)[None, :] * n
    ring = np.rint(np.hypot(fy, fx) / ring_width).astype(np.int64)
    n_rings = int(n // 2 // ring_width) + 1
    keep = ring < n_rings
    idx = ring[keep]

    fa = np.fft.fft2(va)[keep]
    fb = np.fft.fft2(vb)[keep]
    # same arithmetic for cross and auto terms so frc(X, X) is exactly 1
    cross = np.bincount(idx, fa.real * fb.real + fa.imag * fb.imag, n_rings)
    pa = np.bincount(idx, fa.real * fa.real + fa.imag * fa.imag, n_rings)
    pb = np.bincount(idx, fb.real * fb.real + fb.imag * fb.imag, n_rings)
    counts = np.bincount(idx, minlength=n_rings)
    if np.any(counts == 0):
        raise ValueError("a frequency ring has no samples; use a wider ring_width")
    denom = np.sqrt(pa * pb)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.where(denom > 0, cross / denom, 0.0)
    radii = np.arange(n_rings) * ring_width / (n * pitch)
    return FRCCurve(radii, np.clip(corr, -1.0, 1.0), counts)


def half_bit_threshold(counts) -> np.ndarray:
    """Half-bit information threshold for rings of the given sizes."""
    s = 1.0 / np.sqrt(np.asarray(counts, dtype=np.float64))
    return (0.2071 + 1.9102 * s) / (1.2071 + 0.9102 * s)


class ResolutionBeyondNyquist(ValueError):
    pass


def frc_resolution(curve: FRCCurve, threshold="0.5") -> float:
    """First frequency where the FRC drops below ``threshold``.

    ``threshold`` is a number or ``"half_bit"``. The crossing is linearly
    interpolated between rings. DC is skipped.
    """
    if len(curve.radii) < 2:
        raise ValueError("FRC curve needs at least two rings")
    if isinstance(threshold, str) and threshold == "half_bit":
        thr = half_bit_threshold(curve.counts)
    else:
        thr = np.full(len(curve.radii), float(threshold))
    d = curve.correlation - thr
    for i in range(1, len(d)):
        if d[i] < 0:
            if i == 1 or d[i - 1] < 0:
                return float(curve.radii[i])
            t = d[i - 1] / (d[i - 1] - d[i])
            return float(curve.radii[i - 1] + t * (curve.radii[i] - curve.radii[i - 1]))
    raise ResolutionBeyondNyquist("FRC never crosses the threshold: resolution beyond Nyquist")


def gaussian_mtf_crossing(sigma: float, level: float) -> float:
    """Frequency where exp(-2 pi^2 sigma^2 f^2) equals ``level``."""
    return float(np.sqrt(-np.log(level) / (2 * np.pi**2 * sigma**2)))


def resolution_length(frequency: float) -> float:
    return 1.0 / frequency


def fwhm(profile, pitch: float = 1.0) -> float:
    """Full width at half maximum above a baseline.

    The baseline is the median of the outer 10% of samples (5% from each
    end); edges are located by linear interpolation.
    """
    p = np.asarray(profile, dtype=np.float64)
    if p.ndim != 1 or len(p) < 3:
        raise ValueError("profile must be 1D with at least 3 samples")
    k = max(1, int(round(0.05 * len(p))))
    base = np.median(np.concatenate([p[:k], p[-k:]]))
    q = p - base
    i = int(np.argmax(q))
    peak = q[i]
    if not peak > 0:
        raise ValueError("profile is flat")
    half = peak / 2.0
    left = i
    while left > 0 and q[left - 1] > half:
        left -= 1
    right = i
    while right < len(q) - 1 and q[right + 1] > half:
        right += 1
    if left == 0 or right == len(q) - 1:
        raise ValueError("profile does not fall to half maximum inside the window")
    xl = left - (q[left] - half) / (q[left] - q[left - 1])
    xr = right + (q[right] - half) / (q[right] - q[right + 1])
    return float((xr - xl) * pitch)


def central_profile(img: Image2D, axis: int = 1) -> np.ndarray:
    """Row (axis=1) or column (axis=0) through the maximum of an image."""
    r, c = np.unravel_index(np.argmax(img.values), img.shape)
    return img.values[r, :] if axis == 1 else img.values[:, c]


@dataclass(frozen=True)
class SNRModel:
    """Quantities entering the cross-correlation SNR prediction.

    ``n_sample`` defaults to ``T_A / a`` when given as None.
    """

    kappa: float
    n_masks: float
    n_sample: float | None = None
    area_open: float | None = None  # µm^2
    psf_area: float | None = None  # µm^2
    brightness: float | None = None  # n cm^-2 s^-1
    xi: float | None = None

    @property
    def degrees_of_freedom(self) -> float:
        if self.n_sample is not None:
            return self.n_sample
        if self.area_open is None or self.psf_area is None:
            raise ValueError("need n_sample or both area_open and psf_area")
        return self.area_open / self.psf_area


def xi_constant(total_exposure: float, resolution_area: float, c: float = 1.0) -> float:
    """Exposure/resolution constant ``c * t_total / area`` (no absolute scale known)."""
    return c * total_exposure / resolution_area


def snr_predict(model: SNRModel, regime: str = "high_brilliance") -> float:
    """Predicted SNR of a cross-correlation ghost image.

    ``high_brilliance``: ``kappa * sqrt(N / n_sample)``.
    ``with_brightness``: ``(n_sample / (kappa^2 N) + xi / B) ** -0.5``.
    """
    n_s = model.degrees_of_freedom
    if not (model.kappa > 0 and model.n_masks > 0 and n_s > 0):
        raise ValueError("kappa, N and n_sample must be positive")
    if regime == "high_brilliance":
        return float(model.kappa * np.sqrt(model.n_masks / n_s))
    if regime == "with_brightness":
        if model.brightness is None or model.xi is None:
            raise ValueError("with_brightness needs brightness and xi")
        if not (model.brightness > 0 and model.xi >= 0):
            raise ValueError("brightness must be positive and xi nonnegative")
        return float((n_s / (model.kappa**2 * model.n_masks) + model.xi / model.brightness) ** -0.5)
    raise ValueError(f"unknown regime {regime!r}")


def empirical_snr(reconstruction, support) -> float:
    """(mean inside support - mean outside) / std outside.

    Returns ``inf`` (signed) when the background has zero spread.
    """
    v = reconstruction.values if isinstance(reconstruction, Image2D) else np.asarray(reconstruction, dtype=np.float64)
    s = np.asarray(support.values if isinstance(support, Image2D) else support) > 0.5
    if s.shape != v.shape:
        raise ValueError("support mask shape does not match the image")
    if s.all() or not s.any():
        raise ValueError("support mask must be neither empty nor full")
    bg = v[~s]
    contrast = v[s].mean() - bg.mean()
    spread = bg.std()
    if spread == 0:
        return float(np.copysign(np.inf, contrast)) if contrast != 0 else float("nan")
    return float(contrast / spread)


def ncc(a, b) -> float:
    """Normalized cross-correlation (Pearson) of two images."""
    va = np.asarray(a.values if isinstance(a, Image2D) else a, dtype=np.float64).ravel()
    vb = np.asarray(b.values if isinstance(b, Image2D) else b, dtype=np.float64).ravel()
    if va.shape != vb.shape:
        raise ValueError("shapes differ")
    va = va - va.mean()
    vb = vb - vb.mean()
    d = np.sqrt(np.dot(va, va) * np.dot(vb, vb))
    if d == 0:
        raise ValueError("a constant image has no defined correlation")
    return float(np.dot(va, vb) / d)
