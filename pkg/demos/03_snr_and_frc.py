"""How SNR grows with the number of patterns, and how FRC reads resolution.

Run: python3 demos/03_snr_and_frc.py
"""

import numpy as np

from ngi.analysis import (SNRModel, empirical_snr, frc, frc_resolution, gaussian_mtf_crossing,
                          resolution_length, snr_predict, xi_constant)
from ngi.image import blur_array
from ngi.mask import SpeckleEnsemble
from ngi.measurement import BucketGrid, BucketSeries, cd_stencil
from ngi.recon import xc_reconstruct

# %% Empirical SNR against N with pixel-sized speckle
t = cd_stencil((32, 32), 51.4, holes=((0.8, (0.0, 0.0)),))
rng = np.random.default_rng(3)
frames = rng.exponential(1.0, (4096, 32, 32))
b = np.einsum("nij,ij->n", frames, t.values)
b += rng.normal(0, 0.1 * b.std(), b.shape)
for n in (256, 1024, 4096):
    g = xc_reconstruct(SpeckleEnsemble(frames[:n], 51.4, np.zeros(n)),
                       BucketSeries(b[:n], BucketGrid(1, 1, 32), np.zeros(n)))
    print(f"N = {n:5d}: SNR {empirical_snr(g.estimate, t.values > 0.5):5.2f}")
# every fourfold increase in N roughly doubles the SNR

# %% The prediction, with and without a brightness limit
xi = xi_constant(total_exposure=1716 * 5.0, resolution_area=250.0**2)
for bright in (1e-3, 1e-1, 1e1, None):
    m = SNRModel(0.31, 1716, 50, brightness=bright, xi=xi)
    regime = "high_brilliance" if bright is None else "with_brightness"
    print(f"brightness {bright!s:>6}: predicted SNR {snr_predict(m, regime):.3f}")

# %% FRC of an image against a blurred, lightly noisy copy
x = rng.normal(size=(256, 256))
y = blur_array(x, 4.0) + 0.1 * rng.normal(size=x.shape)
f = frc_resolution(frc(x, y))
print(f"FRC crossing {f:.4f} cycles/px (Gaussian MTF prediction "
      f"{gaussian_mtf_crossing(4.0, 0.1 / np.sqrt(3)):.4f}), resolution {resolution_length(f):.1f} px")
