"""edakit: deterministic workbench for EDA denoising and event prediction.

Pipeline stages: synthetic signal generation and segmenting (signal_io),
realistic artifact augmentation (augment), a CNN-Transformer teacher and a
depthwise-separable student (models) trained by knowledge distillation
(distill) on a from-scratch autodiff engine (engine), with reconstruction
metrics and a leave-one-subject-out prediction harness (evaluate). The CLI
(cli) ties the stages together.
"""

__version__ = "0.1.0"
