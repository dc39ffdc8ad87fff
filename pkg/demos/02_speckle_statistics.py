"""Speckle contrast and resolution of the granular mask.

The image resolution of correlation ghost imaging is set by the width of
the speckle autocovariance. Here we vary grain size and source blur and watch
the width follow.

Run: python3 demos/02_speckle_statistics.py   (about a minute)
"""

import numpy as np

from ngi.analysis import central_profile, fwhm
from ngi.mask import (BeamGeometry, Detector, MaskConfig, generate_ensemble, generate_mask, sweep_angles,
                      speckle_contrast)
from ngi.recon import psf_autocovariance

det = Detector(128, 128, 51.4)
angles = sweep_angles(256)

for diameter in (0.65, 1.3):
    for blur_mm in (0.0, 150.0):
        mask = generate_mask(MaskConfig(grain_diameter=diameter), seed=1)
        ens = generate_ensemble(mask, angles, beam=BeamGeometry(mask_to_detector=blur_mm), detector=det)
        psf = psf_autocovariance(ens)
        w = np.mean([fwhm(central_profile(psf, ax), psf.pitch) for ax in (0, 1)])
        print(f"grain {diameter:4.2f} mm, mask-detector {blur_mm:5.1f} mm: "
              f"kappa {speckle_contrast(ens):.3f}, PSF FWHM {w:5.0f} µm")

# Doubling the grains roughly doubles the PSF width, and the penumbral
# blur (150 µm sigma at 150 mm) lowers contrast and widens it further.
