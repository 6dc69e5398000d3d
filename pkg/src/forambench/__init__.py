"""Desk-scale foraminifera imaging bench.

Library layout:

- ``autograd``, ``nn``, ``optim``, ``checkpoint`` - float64 tensor engine
- ``image``, ``resample`` - 8-bit rasters, interpolation kernels, degradation
- ``metrics``, ``classifier`` - PSNR / SSIM / Frechet feature distance
- ``swin_sr`` - windowed-attention super-resolution network and trainer
- ``style_gan`` - conditional style-based generator / discriminator
- ``fewshot_seg`` - generator-feature few-shot segmentation
- ``synth``, ``dataset``, ``bench``, ``cli`` - corpus synthesis and batch runs
"""

from .autograd import Tape, Tensor, tensor, parameter

__all__ = ["Tape", "Tensor", "tensor", "parameter"]
__version__ = "0.1.0"
