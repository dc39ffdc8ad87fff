"""Neutron ghost imaging: speckle-mask simulation, bucket measurement,
cross-correlation and Landweber reconstruction, super-resolution and
resolution metrics."""

from .image import Image2D, RegionSpec, bin, crop, fft_notch_filter, gaussian_blur
from .mask import (BeamGeometry, Detector, GrainMask, MaskConfig, SpeckleEnsemble, generate_ensemble,
                   generate_mask, project_mask, speckle_contrast)
from .measurement import BucketGrid, BucketSeries, bucket_signal, phantom, simulate_bucket_series
from .recon import (GhostImage, NumericalError, ReconConfig, ixc_reconstruct, psf_autocovariance,
                    superres_reconstruct, xc_reconstruct)
from .analysis import SNRModel, empirical_snr, frc, frc_resolution, fwhm, ncc, snr_predict

__version__ = "0.1.0"
