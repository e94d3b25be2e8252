"""Residual-ensemble denoising diffusion for segmentation and restoration.

A frozen end-to-end model's output misses the ground truth by a residual;
a diffusion model is trained to produce the reflection of that output about
the ground truth, and averaging the two cancels the residual. Submodules:

    numeric     tensors, reverse-mode autodiff, NN kernels, RNG, Adam
    schedule    the affine beta schedule and derived coefficient tables
    diffusion   forward noising, reverse sampling, training loss
    models      the conditional denoiser and the end-to-end learner
    pipeline    residual construction, training and inference loops
    data        deterministic synthetic scene generators
    metrics     IoU / Dice / MSE / PSNR and the CSV report format
    config      strict YAML run configuration
    checkpoint  binary checkpoint container
    verify      executable analytic self-checks
    cli         command-line verbs

This file intentionally imports nothing: the launcher must be able to set
BLAS thread caps before numpy loads (see _main).
"""

__version__ = "0.1.0"
