"""Ghost-image reconstruction: cross-correlation, its autocovariance PSF and
Landweber-iterated cross-correlation, globally or per bucket pixel.

All iterative work is done on a batch of independent blocks (one per bucket
pixel). A single bucket is the 1 x 1 case. Each block's linear map sends an
image to the mean-subtracted bucket series; its rows are the frames with the
ensemble-mean frame removed, so the first Landweber step from zero is
exactly the cross-correlation estimate up to a scalar.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .image import Image2D, notch_filter_array
from .mask import SpeckleEnsemble
from .measurement import BucketGrid, BucketSeries

log = logging.getLogger(__name__)

METHODS = ("xc", "ixc")
REGULARIZERS = ("none", "gradient_sparsity", "smoothness")
TV_STEP = 0.2


class NumericalError(RuntimeError):
    """Raised when an iteration diverges or a quantity is degenerate."""


@dataclass(frozen=True)
class ReconConfig:
    """Reconstruction settings.

    ``absolute_level`` pins each block's mean to its mean bucket reading
    (the one equation that mean subtraction throws away); leave it off to
    solve the mean-subtracted problem exactly as posed.
    ``deblock_mode`` is ``"in_loop"`` or ``"post"``; the xc method always
    filters as a post-pass.
    """

    method: str = "ixc"
    iterations: int = 128
    step_size: float | str = "auto"
    regularizer: str = "none"
    regularizer_weight: float = 0.0
    nonnegativity: bool = False
    absolute_level: bool = False
    deblock: bool = False
    deblock_mode: str = "in_loop"
    notch_halfwidth: int = 1
    power_iterations: int = 20

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.method == "ixc" and self.iterations < 1:
            raise ValueError("ixc needs at least one iteration")
        if self.step_size != "auto" and not (isinstance(self.step_size, (int, float)) and self.step_size > 0):
            raise ValueError(f"step_size must be 'auto' or positive, got {self.step_size!r}")
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"regularizer must be one of {REGULARIZERS}, got {self.regularizer!r}")
        if self.regularizer_weight < 0:
            raise ValueError("regularizer_weight must be >= 0")
        if self.deblock_mode not in ("in_loop", "post"):
            raise ValueError("deblock_mode must be 'in_loop' or 'post'")


@dataclass
class GhostImage:
    estimate: Image2D
    method: str
    config: ReconConfig
    residual_history: np.ndarray = field(default_factory=lambda: np.zeros(0))
    initial_misfit: float | None = None
    step_sizes: np.ndarray | None = None


# --- helpers ----------------------------------------------------------------

def _frames_of(ensemble) -> tuple[np.ndarray, float]:
    if isinstance(ensemble, SpeckleEnsemble):
        return ensemble.frames, ensemble.pitch
    frames = np.asarray(ensemble, dtype=np.float64)
    if frames.ndim != 3:
        raise ValueError("frames must have shape (N, H, W)")
    return frames, 1.0


def _bucket_values(series, n: int, grid: BucketGrid | None = None) -> np.ndarray:
    """Bucket readings as an (N, R, C) array in ensemble intensity units."""
    if isinstance(series, BucketSeries):
        values = series.normalized()
    else:
        values = np.asarray(series, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None, None]
    if values.shape[0] != n:
        raise ValueError(f"{values.shape[0]} bucket readings for {n} speckle frames")
    if grid is not None and values.shape[1:] != grid.shape:
        raise ValueError(f"bucket array {values.shape[1:]} does not match grid {grid.shape}")
    return values


def _grid_for(frames: np.ndarray, series) -> BucketGrid:
    if isinstance(series, BucketSeries):
        return series.grid
    h, w = frames.shape[1:]
    values = np.asarray(series)
    if values.ndim == 1 or values.shape[1:] == (1, 1):
        if h != w:
            return _RectGrid(h, w)
        return BucketGrid(1, 1, h)
    r, c = values.shape[1:]
    if h % r or w % c or h // r != w // c:
        raise ValueError(f"a {r}x{c} bucket array does not tile {h}x{w} frames")
    return BucketGrid(r, c, h // r)


@dataclass(frozen=True)
class _RectGrid:
    """Single bucket over a non-square frame."""

    height: int
    width: int
    rows: int = 1
    cols: int = 1

    @property
    def shape(self):
        return (1, 1)

    @property
    def image_shape(self):
        return (self.height, self.width)

    def check_tiles(self, shape):
        if tuple(shape[-2:]) != self.image_shape:
            raise ValueError("frame shape does not match the bucket footprint")


def _block_dims(grid) -> tuple[int, int, int, int]:
    h, w = grid.image_shape
    return grid.rows, grid.cols, h // grid.rows, w // grid.cols


def to_blocks(values: np.ndarray, grid) -> np.ndarray:
    """(..., H, W) -> (..., R*C, zh*zw) with blocks in row-major order."""
    r, c, zh, zw = _block_dims(grid)
    lead = values.shape[:-2]
    v = values.reshape(*lead, r, zh, c, zw)
    nd = len(lead)
    order = tuple(range(nd)) + (nd, nd + 2, nd + 1, nd + 3)
    return v.transpose(order).reshape(*lead, r * c, zh * zw)


def from_blocks(blocks: np.ndarray, grid) -> np.ndarray:
    r, c, zh, zw = _block_dims(grid)
    lead = blocks.shape[:-2]
    nd = len(lead)
    v = blocks.reshape(*lead, r, c, zh, zw)
    order = tuple(range(nd)) + (nd, nd + 2, nd + 1, nd + 3)
    return v.transpose(order).reshape(*lead, r * zh, c * zw)


# --- cross-correlation --------------------------------------------------------

def xc_array(frames: np.ndarray, buckets: np.ndarray, grid) -> np.ndarray:
    """(1/N) sum_j (B_j - mean B) I_j, evaluated per bucket footprint."""
    n = frames.shape[0]
    if n < 2:
        raise ValueError("cross-correlation needs at least two frames")
    weights = buckets - buckets.mean(axis=0)
    r, c, zh, zw = _block_dims(grid)
    f = frames.reshape(n, r, zh, c, zw)
    out = np.einsum("nrzcy,nrc->rzcy", f, weights, optimize=False)
    return out.reshape(r * zh, c * zw) / n


def xc_reconstruct(ensemble, series) -> GhostImage:
    """Cross-correlation estimate from a single bucket series."""
    frames, pitch = _frames_of(ensemble)
    grid = _grid_for(frames, series)
    if grid.shape != (1, 1):
        raise ValueError("xc_reconstruct takes one bucket reading per frame; use superres_reconstruct")
    buckets = _bucket_values(series, frames.shape[0])
    est = xc_array(frames, buckets, grid)
    return GhostImage(Image2D(est, pitch), "xc", ReconConfig(method="xc"))


def _calibrate_xc(frames, buckets, grid, est):
    """Fit B_j ~ s * <I_j, est> + c * <I_j, 1> per block; return s*est + c."""
    fb = to_blocks(frames, grid)  # (N, B, P)
    eb = to_blocks(est, grid)  # (B, P)
    bb = buckets.reshape(buckets.shape[0], -1)  # (N, B)
    u = np.einsum("nbp,bp->nb", fb, eb)
    v = fb.sum(axis=2)
    out = np.empty_like(eb)
    for k in range(eb.shape[0]):
        design = np.column_stack([u[:, k], v[:, k]])
        coef, *_ = np.linalg.lstsq(design, bb[:, k], rcond=None)
        out[k] = coef[0] * eb[k] + coef[1]
    return from_blocks(out, grid)


# --- autocovariance PSF -------------------------------------------------------

def psf_autocovariance(ensemble, pitch: float | None = None, chunk: int = 64) -> Image2D:
    """Ensemble autocovariance of the speckle frames, zero lag at the centre.

    Frames have the ensemble-mean frame removed, then the circular
    autocorrelation of each is averaged over the ensemble. The result is
    scaled to sum to one. When the autocovariance sums to (numerically)
    zero, as for frames with a fixed total, it is scaled to unit peak instead.
    """
    frames, p = _frames_of(ensemble)
    if pitch is not None:
        p = pitch
    n = frames.shape[0]
    if n < 2:
        raise ValueError("the autocovariance needs at least two frames")
    mean = frames.mean(axis=0)
    power = np.zeros(frames.shape[1:])
    for s in range(0, n, chunk):
        spec = np.fft.fft2(frames[s:s + chunk] - mean)
        power += np.sum(spec.real**2 + spec.imag**2, axis=0)
    ac = np.fft.fftshift(np.fft.ifft2(power).real) / (n * power.size)
    peak = ac.max()
    if not peak > 0:
        raise ValueError("the speckle ensemble has zero variance")
    total = ac.sum()
    if total > 1e-9 * peak * ac.size ** 0.5:
        return Image2D(ac / total, p)
    log.warning("autocovariance sums to ~0; normalizing to unit peak instead")
    return Image2D(ac / peak, p)


# --- regularizers -------------------------------------------------------------

def _grad(u):
    gx = np.zeros_like(u)
    gy = np.zeros_like(u)
    gx[:, :-1] = u[:, 1:] - u[:, :-1]
    gy[:-1, :] = u[1:, :] - u[:-1, :]
    return gx, gy


def _div(px, py):
    # negative adjoint of _grad
    d = np.zeros_like(px)
    d[:, 0] += px[:, 0]
    d[:, 1:-1] += px[:, 1:-1] - px[:, :-2]
    d[:, -1] -= px[:, -2]
    d[0, :] += py[0, :]
    d[1:-1, :] += py[1:-1, :] - py[:-2, :]
    d[-1, :] -= py[-2, :]
    return d


def laplacian(u: np.ndarray) -> np.ndarray:
    """5-point Laplacian with replicated (zero-flux) edges."""
    p = np.pad(u, 1, mode="edge")
    return p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4.0 * u


def regularizer_step(estimate, kind: str, weight: float):
    """One regularizing update of an image.

    ``gradient_sparsity``: forward-difference gradients are soft-thresholded
    at ``weight`` and the image is moved so its gradient follows the
    thresholded field (step ``TV_STEP`` along the divergence of the removed
    part). Flat regions are left untouched; edges shrink.
    ``smoothness``: ``u + weight * laplacian(u)``.
    """
    if kind not in REGULARIZERS:
        raise ValueError(f"unknown regularizer {kind!r}")
    if weight < 0:
        raise ValueError("regularizer weight must be >= 0")
    img = estimate if isinstance(estimate, Image2D) else None
    u = img.values if img is not None else np.asarray(estimate, dtype=np.float64)
    if kind == "none" or weight == 0:
        out = u.copy()
    elif kind == "smoothness":
        out = u + weight * laplacian(u)
    else:
        gx, gy = _grad(u)
        mag = np.hypot(gx, gy)
        scale = np.minimum(1.0, weight / np.maximum(mag, 1e-300))
        out = u + TV_STEP * _div(gx * scale, gy * scale)
    return img.with_values(out) if img is not None else out


# --- Landweber ----------------------------------------------------------------

class _BlockProblem:
    """Stack of per-block linear maps with centred frames as rows."""

    def __init__(self, frames, buckets, grid, rng_seed=0):
        self.grid = grid
        r, c, zh, zw = _block_dims(grid)
        n = frames.shape[0]
        # single copy into (B, N, P)
        a = frames.reshape(n, r, zh, c, zw).transpose(1, 3, 0, 2, 4).reshape(r * c, n, zh * zw)
        if np.shares_memory(a, frames):
            a = a.copy()
        self.mean_frame = a.mean(axis=1)  # (B, P)
        a -= self.mean_frame[:, None, :]
        self.a = a
        bb = buckets.reshape(buckets.shape[0], -1).T  # (B, N)
        self.mean_bucket = bb.mean(axis=1)
        self.b = bb - self.mean_bucket[:, None]
        self.rng_seed = rng_seed

    def forward(self, x):
        return np.matmul(self.a, x[:, :, None])[:, :, 0]

    def adjoint(self, r):
        return np.matmul(r[:, None, :], self.a)[:, 0, :]

    def max_sv2(self, steps: int) -> np.ndarray:
        rng = np.random.default_rng(self.rng_seed)
        v = rng.standard_normal((self.a.shape[0], self.a.shape[2]))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        est = np.zeros(self.a.shape[0])
        for _ in range(steps):
            w = self.adjoint(self.forward(v))
            est = np.linalg.norm(w, axis=1)
            v = w / np.maximum(est, 1e-300)[:, None]
        return est

    def level(self, x):
        """Project each block onto {<mean frame, x> = mean bucket}."""
        m = self.mean_frame
        gap = self.mean_bucket - np.sum(m * x, axis=1)
        return x + (gap / np.sum(m * m, axis=1))[:, None] * m


def _landweber(frames, buckets, grid, config: ReconConfig):
    prob = _BlockProblem(frames, buckets, grid)
    if config.step_size == "auto":
        sv2 = prob.max_sv2(config.power_iterations)
        if np.any(sv2 <= 0):
            raise NumericalError("a bucket block has an all-constant speckle series")
        lam = 1.0 / sv2
    else:
        lam = np.full(prob.a.shape[0], float(config.step_size))

    x = np.zeros((prob.a.shape[0], prob.a.shape[2]))
    if config.absolute_level:
        x = prob.level(x)
    resid = prob.b - prob.forward(x)
    initial = float(np.linalg.norm(resid))
    history = np.empty(config.iterations)
    period = grid.image_shape[0] // grid.rows
    in_loop_notch = config.deblock and config.deblock_mode == "in_loop" and grid.shape != (1, 1)

    for k in range(config.iterations):
        x = x + lam[:, None] * prob.adjoint(resid)
        if config.absolute_level:
            x = prob.level(x)
        if config.regularizer != "none" or in_loop_notch or config.nonnegativity:
            img = from_blocks(x, grid)
            img = regularizer_step(img, config.regularizer, config.regularizer_weight)
            if in_loop_notch:
                img = notch_filter_array(img, period, config.notch_halfwidth)
            if config.nonnegativity:
                np.maximum(img, 0.0, out=img)
            x = to_blocks(img, grid)
        resid = prob.b - prob.forward(x)
        history[k] = np.linalg.norm(resid)
        if not np.isfinite(history[k]) or history[k] > 10.0 * max(initial, 1e-300):
            raise NumericalError(
                f"Landweber iteration diverged at step {k + 1} "
                f"(misfit {history[k]:.3g} vs initial {initial:.3g}); use a smaller step_size"
            )
    return from_blocks(x, grid), history, initial, lam


def ixc_reconstruct(ensemble, series, config: ReconConfig = ReconConfig()) -> GhostImage:
    """Landweber-iterated cross-correlation from a single bucket series.

    Iterates ``T <- P[R[T + step * A^T (b - A T)]]`` from ``T = 0`` where
    ``A`` has the centred frames as rows, ``b`` is the centred bucket series,
    ``R`` the optional regularizer step and ``P`` the optional clamp to
    nonnegative values. ``step_size="auto"`` uses ``1/sigma_max(A)^2`` from
    power iteration.
    """
    frames, pitch = _frames_of(ensemble)
    grid = _grid_for(frames, series)
    if grid.shape != (1, 1):
        raise ValueError("ixc_reconstruct takes one bucket reading per frame; use superres_reconstruct")
    if frames.shape[0] < 2:
        raise ValueError("reconstruction needs at least two frames")
    buckets = _bucket_values(series, frames.shape[0])
    config = replace(config, method="ixc")
    est, hist, initial, lam = _landweber(frames, buckets, grid, config)
    return GhostImage(Image2D(est, pitch), "ixc", config, hist, initial, lam)


def superres_reconstruct(ensemble, series, config: ReconConfig = ReconConfig(),
                         grid: BucketGrid | None = None) -> GhostImage:
    """Ghost-image each bucket pixel from the speckle inside its footprint
    and tile the results into one image at the speckle pitch.

    With ``config.deblock`` the harmonics of the bucket period are notched,
    inside the iteration for ixc (``deblock_mode="in_loop"``) or once at the
    end otherwise.
    """
    frames, pitch = _frames_of(ensemble)
    if grid is None:
        grid = _grid_for(frames, series)
    grid.check_tiles(frames.shape)
    n = frames.shape[0]
    if n < 2:
        raise ValueError("reconstruction needs at least two frames")
    buckets = _bucket_values(series, n, grid)
    period = grid.image_shape[0] // grid.rows

    if config.method == "xc":
        est = xc_array(frames, buckets, grid)
        if config.absolute_level:
            est = _calibrate_xc(frames, buckets, grid, est)
        if config.deblock and grid.shape != (1, 1):
            est = notch_filter_array(est, period, config.notch_halfwidth)
        return GhostImage(Image2D(est, pitch), "xc", config)

    est, hist, initial, lam = _landweber(frames, buckets, grid, config)
    if config.deblock and config.deblock_mode == "post" and grid.shape != (1, 1):
        est = notch_filter_array(est, period, config.notch_halfwidth)
    return GhostImage(Image2D(est, pitch), "ixc", config, hist, initial, lam)
