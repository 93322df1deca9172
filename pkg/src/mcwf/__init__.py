"""Differentiable multi-channel Wiener filtering for speech enhancement.

The package provides, bottom up:

- ``autodiff``: a reverse-mode gradient tape over dense float64 tensors.
- ``complex_ops``: complex pairs, batched Hermitian inverse / logdet.
- ``stft``: consistency-aware STFT analysis/synthesis, all differentiable.
- ``enhance``: mask-weighted spatial covariance estimation and the
  time-varying multi-channel Wiener filter.
- ``objectives``: the Gaussian posterior objective, multi-channel wave
  approximation, the combined consistency-aware objective, and the
  monaural masking baselines.
- ``model`` / ``training``: feature extraction, a compact trainable
  mask/PSD estimator, Adam with a plateau schedule, checkpointing.
- ``scenes``: synthetic far-field two-microphone scene generation.
- ``baselines`` / ``metrics`` / ``pipeline``: mask-based MVDR, SDR and
  cepstrum distortion, and the end-to-end enhancement glue.
- ``cli``: the ``mcwf`` command (simulate / train / enhance / eval /
  gradcheck / project).
"""

from .autodiff import GradientTape, Tensor
from .complex_ops import ComplexTensor, complex_matmul, hermitian_inverse, hermitian_logdet
from .stft import Spectrogram, StftConfig, inconsistency, istft, project_consistent, stft

__version__ = "0.1.0"

__all__ = [
    "GradientTape",
    "Tensor",
    "ComplexTensor",
    "complex_matmul",
    "hermitian_inverse",
    "hermitian_logdet",
    "StftConfig",
    "Spectrogram",
    "stft",
    "istft",
    "project_consistent",
    "inconsistency",
    "__version__",
]
