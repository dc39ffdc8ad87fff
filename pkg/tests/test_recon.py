import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ngi.analysis import central_profile, fwhm
from ngi.image import Image2D, harmonic_energy
from ngi.mask import Detector, MaskConfig, SpeckleEnsemble, generate_ensemble, generate_mask
from ngi.measurement import BucketGrid, BucketSeries, ensemble_buckets, simulate_bucket_series
from ngi.recon import (GhostImage, NumericalError, ReconConfig, ixc_reconstruct, laplacian,
                       psf_autocovariance, regularizer_step, superres_reconstruct, xc_array, xc_reconstruct)


def _random_problem(n, shape, seed=0, binary=False):
    rng = np.random.default_rng(seed)
    frames = rng.random((n,) + shape)
    if binary:
        frames = (frames < 0.5).astype(float)
    t = rng.random(shape)
    ens = SpeckleEnsemble(frames, 1.0, np.arange(n, dtype=float))
    buckets = np.einsum("nij,ij->n", frames, t)
    return ens, BucketSeries(buckets, BucketGrid(1, 1, shape[0]), ens.angles), t


def _brute_xc(frames, buckets):
    n, h, w = frames.shape
    bbar = sum(buckets) / n
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for j in range(n):
                acc += (buckets[j] - bbar) * frames[j, y, x]
            out[y, x] = acc / n
    return out


def test_config_validation():
    with pytest.raises(ValueError):
        ReconConfig(method="cg")
    with pytest.raises(ValueError):
        ReconConfig(iterations=0)
    with pytest.raises(ValueError):
        ReconConfig(step_size=-1.0)
    with pytest.raises(ValueError):
        ReconConfig(regularizer="l1")
    with pytest.raises(ValueError):
        ReconConfig(regularizer_weight=-0.1)


def test_xc_constant_buckets_give_zero():
    ens, _, _ = _random_problem(10, (4, 4))
    s = BucketSeries(np.full(10, 3.0), BucketGrid(1, 1, 4), ens.angles)
    assert np.all(xc_reconstruct(ens, s).estimate.values == 0)


def test_xc_one_hot_closed_form():
    p = 16
    frames = np.eye(p).reshape(p, 4, 4)
    t = np.random.default_rng(1).random((4, 4))
    ens = SpeckleEnsemble(frames, 1.0, np.arange(p, dtype=float))
    s = BucketSeries(t.ravel(), BucketGrid(1, 1, 4), ens.angles)
    est = xc_reconstruct(ens, s).estimate.values
    assert np.allclose(est, (t - t.mean()) / p, atol=1e-15)


def test_xc_brute_force():
    ens, s, _ = _random_problem(64, (4, 4), seed=2, binary=True)
    est = xc_reconstruct(ens, s).estimate.values
    assert np.max(np.abs(est - _brute_xc(ens.frames, s.values[:, 0, 0]))) <= 1e-12


def test_xc_needs_two_frames():
    ens, s, _ = _random_problem(1, (4, 4))
    with pytest.raises(ValueError):
        xc_reconstruct(ens, s)
    with pytest.raises(ValueError):
        ens5 = _random_problem(5, (4, 4))[0]
        xc_reconstruct(ens5, BucketSeries(np.ones(4), BucketGrid(1, 1, 4), np.zeros(4)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_xc_linear_in_buckets(seed):
    rng = np.random.default_rng(seed)
    frames = rng.random((12, 4, 4))
    b1, b2 = rng.random((2, 12, 1, 1))
    g = BucketGrid(1, 1, 4)
    lhs = xc_array(frames, b1 + b2, g)
    rhs = xc_array(frames, b1, g) + xc_array(frames, b2, g)
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-14)


def test_xc_uses_normalized_bucket_units():
    ens, s, _ = _random_problem(30, (4, 4), seed=3)
    short = BucketSeries(s.values * 0.125, s.grid, s.angles, exposure=5.0, reference_exposure=40.0)
    a = xc_reconstruct(ens, s).estimate.values
    b = xc_reconstruct(ens, short).estimate.values
    assert np.allclose(a, b, rtol=1e-12)


# --- PSF ------------------------------------------------------------------------

def test_psf_one_hot():
    p = 36
    ens = SpeckleEnsemble(np.eye(p).reshape(p, 6, 6), 10.0, np.zeros(p))
    psf = psf_autocovariance(ens).values
    # exact autocovariance: 1 - 1/P at zero lag, -1/P elsewhere; it sums to
    # zero, so the result is scaled to unit peak
    expected = np.full((6, 6), -1.0 / (p - 1))
    expected[3, 3] = 1.0
    assert np.allclose(psf, expected, atol=1e-12)


def test_psf_iid_noise():
    rng = np.random.default_rng(4)
    n = 256
    ens = SpeckleEnsemble(rng.random((n, 32, 32)), 1.0, np.zeros(n))
    psf = psf_autocovariance(ens).values
    centre = psf[16, 16]
    off = np.delete(psf.ravel(), 16 * 32 + 16)
    # with unit-sum scaling the lag-0 value dominates; off-centre values are
    # zero-mean noise with standard error ~ centre / sqrt(n * pixels)
    se = centre / np.sqrt(n * 32 * 32)
    assert np.all(np.abs(off) <= 5 * se * 1.2)
    assert centre > 50 * np.abs(off).max()


def test_psf_errors():
    with pytest.raises(ValueError):
        psf_autocovariance(SpeckleEnsemble(np.ones((1, 4, 4)), 1.0, [0.0]))
    with pytest.raises(ValueError):
        psf_autocovariance(SpeckleEnsemble(np.ones((3, 4, 4)), 1.0, [0.0, 1.0, 2.0]))


def test_psf_sums_to_one_for_speckle():
    m = generate_mask(MaskConfig(), seed=1)
    e = generate_ensemble(m, np.arange(64) * 0.21, detector=Detector(64, 64, 51.4))
    psf = psf_autocovariance(e)
    assert psf.values.sum() == pytest.approx(1.0)
    assert np.unravel_index(np.argmax(psf.values), psf.shape) == (32, 32)


# --- Landweber -------------------------------------------------------------------

def test_first_step_proportional_to_xc():
    ens, s, _ = _random_problem(50, (6, 6), seed=5)
    xc = xc_reconstruct(ens, s).estimate.values
    one = ixc_reconstruct(ens, s, ReconConfig(iterations=1, step_size=1.0 / 50)).estimate.values
    assert np.allclose(one, xc, rtol=1e-10, atol=1e-14)


def test_matches_pseudo_inverse():
    ens, s, _ = _random_problem(200, (8, 8), seed=6)
    g = ixc_reconstruct(ens, s, ReconConfig(iterations=128))
    a = (ens.frames - ens.frames.mean(axis=0)).reshape(200, -1)
    b = s.values[:, 0, 0] - s.values.mean()
    oracle = (np.linalg.pinv(a) @ b).reshape(8, 8)
    rel = np.linalg.norm(g.estimate.values - oracle) / np.linalg.norm(oracle)
    assert rel <= 0.05
    assert len(g.residual_history) == 128
    assert g.initial_misfit == pytest.approx(np.linalg.norm(b))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(20, 120))
def test_residual_monotone(seed, n):
    ens, s, _ = _random_problem(n, (6, 6), seed=seed)
    h = ixc_reconstruct(ens, s, ReconConfig(iterations=40)).residual_history
    assert np.all(np.diff(h) <= 1e-12 * h[0])
    assert h[0] <= ixc_reconstruct(ens, s, ReconConfig(iterations=1)).initial_misfit


def test_divergence_detected():
    ens, s, _ = _random_problem(50, (6, 6), seed=7)
    with pytest.raises(NumericalError, match="smaller step_size"):
        ixc_reconstruct(ens, s, ReconConfig(iterations=50, step_size=10.0))


def test_degenerate_block_raises():
    frames = np.ones((10, 4, 4))
    ens = SpeckleEnsemble(frames, 1.0, np.zeros(10))
    s = BucketSeries(np.arange(10.0), BucketGrid(1, 1, 4), ens.angles)
    with pytest.raises(NumericalError):
        ixc_reconstruct(ens, s)


def test_nonnegativity_and_absolute_level():
    ens, s, t = _random_problem(300, (6, 6), seed=8)
    g = ixc_reconstruct(ens, s, ReconConfig(iterations=200, nonnegativity=True, absolute_level=True))
    assert g.estimate.values.min() >= 0
    # with the level constraint the mean is recovered, not just the contrast
    assert g.estimate.values.mean() == pytest.approx(t.mean(), rel=0.05)


def test_iterations_sharpen_psf():
    # a point object: the XC image is the PSF; Landweber narrows it
    m = generate_mask(MaskConfig(), seed=4)
    det = Detector(48, 48, 51.4)
    e = generate_ensemble(m, np.random.default_rng(0).uniform(0, 360, 1200), detector=det)
    t = np.zeros((48, 48))
    t[24, 24] = 1.0
    s = simulate_bucket_series(e, t)
    xc = xc_reconstruct(e, s).estimate
    ixc = ixc_reconstruct(e, s, ReconConfig(iterations=128)).estimate
    w_xc = fwhm(central_profile(xc), xc.pitch)
    w_ixc = fwhm(central_profile(ixc), ixc.pitch)
    assert w_ixc < 0.7 * w_xc


# --- regularizers -----------------------------------------------------------------

def test_regularizer_identity_at_zero_weight():
    v = np.random.default_rng(9).random((8, 8))
    for kind in ("none", "gradient_sparsity", "smoothness"):
        assert np.array_equal(regularizer_step(v, kind, 0.0), v)
    img = regularizer_step(Image2D(v, 3.0), "smoothness", 0.0)
    assert isinstance(img, Image2D) and img.pitch == 3.0
    with pytest.raises(ValueError):
        regularizer_step(v, "wavelet", 0.1)
    with pytest.raises(ValueError):
        regularizer_step(v, "smoothness", -1.0)


def test_tv_flat_regions_untouched():
    v = np.zeros((20, 20))
    v[:, 10:] = 1.0
    out = regularizer_step(v, "gradient_sparsity", 0.3)
    assert np.array_equal(out[:, :8], v[:, :8])
    assert np.array_equal(out[:, 12:], v[:, 12:])
    # the step shrinks
    jump = out[:, 10] - out[:, 9]
    assert np.all(jump < 1.0) and np.all(jump > 0)
    assert out.sum() == pytest.approx(v.sum())


def test_smoothness_delta_stencil():
    d = np.zeros((5, 5))
    d[2, 2] = 1.0
    out = regularizer_step(d, "smoothness", 0.1)
    expected = d.copy()
    expected[2, 2] = 1 - 0.4
    for r, c in ((1, 2), (3, 2), (2, 1), (2, 3)):
        expected[r, c] = 0.1
    assert np.allclose(out, expected, atol=1e-15)
    assert np.allclose(laplacian(np.ones((4, 4))), 0)


# --- super-resolution -------------------------------------------------------------

def test_superres_single_bucket_equals_global():
    ens, s, _ = _random_problem(60, (8, 8), seed=10)
    for cfg in (ReconConfig(method="xc"), ReconConfig(iterations=20)):
        a = superres_reconstruct(ens, s, cfg).estimate.values
        glob = xc_reconstruct(ens, s) if cfg.method == "xc" else ixc_reconstruct(ens, s, cfg)
        assert np.array_equal(a, glob.estimate.values)


def test_superres_dims_and_blocks():
    rng = np.random.default_rng(11)
    frames = rng.random((40, 256, 256))
    ens = SpeckleEnsemble(frames, 51.4, np.zeros(40))
    t = rng.random((256, 256))
    g = BucketGrid(8, 8, 32)
    s = BucketSeries(ensemble_buckets(frames, t, g), g, ens.angles)
    out = superres_reconstruct(ens, s, ReconConfig(method="xc"))
    assert out.estimate.shape == (256, 256)
    # block (r, c) only uses its own footprint and bucket column
    sub = SpeckleEnsemble(frames[:, 32:64, 96:128], 51.4, np.zeros(40))
    single = BucketSeries(s.values[:, 1, 3], BucketGrid(1, 1, 32), ens.angles)
    assert np.allclose(out.estimate.values[32:64, 96:128], xc_reconstruct(sub, single).estimate.values)


def test_superres_partition_consistency():
    # the footprint sum of each block's XC image is the covariance of that
    # bucket with the footprint's total speckle intensity
    rng = np.random.default_rng(12)
    frames = rng.random((30, 16, 16))
    ens = SpeckleEnsemble(frames, 1.0, np.zeros(30))
    t = rng.random((16, 16))
    g = BucketGrid(4, 4, 4)
    b = ensemble_buckets(frames, t, g)
    est = superres_reconstruct(ens, BucketSeries(b, g, ens.angles), ReconConfig(method="xc")).estimate.values
    sums = est.reshape(4, 4, 4, 4).sum(axis=(1, 3))
    s_tot = frames.reshape(30, 4, 4, 4, 4).sum(axis=(2, 4))
    cov = ((b - b.mean(axis=0)) * s_tot).mean(axis=0)
    assert np.allclose(sums, cov, rtol=1e-6)


def test_superres_grid_mismatch():
    ens, _, _ = _random_problem(10, (8, 8))
    g = BucketGrid(3, 3, 3)
    with pytest.raises(ValueError):
        superres_reconstruct(ens, BucketSeries(np.ones((10, 3, 3)), g, ens.angles), ReconConfig(), g)


def test_deblock_modes_remove_harmonics():
    rng = np.random.default_rng(13)
    frames = rng.random((120, 32, 32))
    ens = SpeckleEnsemble(frames, 1.0, np.zeros(120))
    yy, xx = np.mgrid[0:32, 0:32]
    t = 0.5 + 0.4 * np.sin(xx / 5.0) * np.cos(yy / 7.0)
    g = BucketGrid(4, 4, 8)
    s = BucketSeries(ensemble_buckets(frames, t, g), g, ens.angles)
    plain = superres_reconstruct(ens, s, ReconConfig(iterations=30)).estimate.values
    e0 = harmonic_energy(plain, 8)
    for mode in ("in_loop", "post"):
        out = superres_reconstruct(ens, s, ReconConfig(iterations=30, deblock=True, deblock_mode=mode))
        assert harmonic_energy(out.estimate.values, 8) <= 1e-20 * max(e0, 1)
    xc = superres_reconstruct(ens, s, ReconConfig(method="xc", deblock=True)).estimate.values
    assert harmonic_energy(xc, 8) <= 1e-20 * max(e0, 1)


def test_ghost_image_metadata():
    ens, s, _ = _random_problem(20, (4, 4))
    g = ixc_reconstruct(ens, s, ReconConfig(iterations=3))
    assert isinstance(g, GhostImage) and g.method == "ixc"
    assert g.step_sizes.shape == (1,)
    assert xc_reconstruct(ens, s).residual_history.size == 0
