"""Inference-time baselines: monaural T-F masking and mask-based MVDR
beamforming.

The beamformer estimates time-invariant speech/noise SCMs from masks,
takes the principal eigenvector of the speech SCM as the steering vector
(power iteration), and forms MVDR weights scaled to be distortionless
toward the reference channel: w^H a = a_ref.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .complex_ops import ComplexTensor
from .enhance import estimate_time_invariant_scm
from .errors import EigenFailure, ShapeMismatch, SingularNoiseScm
from .stft import Spectrogram

__all__ = [
    "BeamformerWeights",
    "tf_mask_enhance",
    "mvdr_from_masks",
    "apply_beamformer",
]

NOISE_SCM_EPS = 1e-6
WEIGHT_NORM_GUARD = 1e6
POWER_ITERS = 100
POWER_TOL = 1e-10


@dataclass
class BeamformerWeights:
    """Time-invariant per-frequency filter (F, K) plus its reference channel."""

    w: np.ndarray
    reference_channel: int = 0

    def __post_init__(self):
        if not np.all(np.isfinite(self.w)):
            raise EigenFailure("beamformer weights are not finite")
        norms = np.linalg.norm(self.w, axis=-1)
        if norms.max(initial=0.0) > WEIGHT_NORM_GUARD:
            raise EigenFailure(f"beamformer weight norm {norms.max():.3g} exceeds guard")


def tf_mask_enhance(x: Spectrogram, mask, ref_channel: int = 0) -> Spectrogram:
    """Monaural enhancement: mask times the reference channel."""
    mask = np.asarray(mask, dtype=np.float64)
    t, f, k = x.data.shape
    if mask.shape != (t, f):
        raise ShapeMismatch(f"mask shape {mask.shape} does not match ({t}, {f})")
    ref = x.numpy()[:, :, ref_channel]
    out = (mask * ref)[:, :, None]
    return Spectrogram(ComplexTensor.from_numpy(out), x.config, x.num_samples)


def _principal_eigenvector(m: np.ndarray) -> np.ndarray:
    """Power iteration for one Hermitian PSD matrix."""
    k = m.shape[0]
    v = m[:, int(np.argmax(np.real(np.diag(m))))].copy()
    norm = np.linalg.norm(v)
    if norm == 0.0:
        v = np.ones(k, dtype=complex)
        norm = np.sqrt(k)
    v /= norm
    lam = None
    for _ in range(POWER_ITERS):
        nv = m @ v
        norm = np.linalg.norm(nv)
        if norm == 0.0:
            raise EigenFailure("power iteration hit the zero vector")
        nv /= norm
        new_lam = float(np.real(np.conj(nv) @ m @ nv))
        if lam is not None and abs(new_lam - lam) <= POWER_TOL * max(1.0, abs(new_lam)):
            return nv
        lam = new_lam
        v = nv
    raise EigenFailure(f"power iteration did not converge within {POWER_ITERS} steps")


def mvdr_from_masks(x: Spectrogram, mask_s, mask_n, ref_channel: int = 0) -> BeamformerWeights:
    """MVDR weights from mask-estimated SCMs; distortionless toward
    ``ref_channel``: w^H a equals the reference component of the steering
    vector, so the output estimates speech as observed at that microphone."""
    r_s = estimate_time_invariant_scm(x, mask_s).numpy()
    r_n = estimate_time_invariant_scm(x, mask_n).numpy()
    f, k = r_s.shape[0], r_s.shape[-1]
    weights = np.zeros((f, k), dtype=complex)
    eye = np.eye(k)
    for fi in range(f):
        a = _principal_eigenvector(r_s[fi])
        rn = r_n[fi] + (NOISE_SCM_EPS / k) * np.real(np.trace(r_n[fi])) * eye
        try:
            rn_inv_a = np.linalg.solve(rn, a)
        except np.linalg.LinAlgError as e:
            raise SingularNoiseScm(f"noise SCM at bin {fi} is singular") from e
        denom = np.conj(a) @ rn_inv_a
        if abs(denom) < 1e-18:
            raise SingularNoiseScm(f"degenerate MVDR denominator at bin {fi}")
        w = rn_inv_a / denom
        weights[fi] = np.conj(a[ref_channel]) * w
    return BeamformerWeights(weights, ref_channel)


def apply_beamformer(bf: BeamformerWeights, x: Spectrogram) -> Spectrogram:
    """y[t, f] = w_f^H x[t, f], a single-channel spectrogram."""
    t, f, k = x.data.shape
    if bf.w.shape != (f, k):
        raise ShapeMismatch(f"weights {bf.w.shape} do not match ({f}, {k})")
    out = np.einsum("fk,tfk->tf", np.conj(bf.w), x.numpy())[:, :, None]
    return Spectrogram(ComplexTensor.from_numpy(out), x.config, x.num_samples)
