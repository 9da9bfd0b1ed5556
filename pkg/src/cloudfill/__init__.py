"""cloudfill: transformer-based reconstruction of cloud-occluded MSI.

Modules:
    tensor      - float32 autodiff tensors, Adam, gradient checker, TSR1 io
    dataio      - scenes, tiling, splits, revisit aggregation, synthesis
    cloudsim    - synthetic cloud masks and mask algebra
    vit         - the S-ViT / MTS-ViT / SMTS-ViT model family
    objective   - masked MSE + spectral-angle multi-scale training loss
    evalmetrics - MSE / SAM / PSNR / SSIM reports and the interp baseline
    trainer     - deterministic training, evaluation, experiment matrix
    cli         - command-line entry points
"""

__version__ = "0.1.0"
