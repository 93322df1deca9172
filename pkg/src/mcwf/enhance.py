"""Mask-weighted spatial covariance estimation and the time-varying
multi-channel Wiener filter.

The time-invariant SCM of a source at frequency f is the mask-weighted
average of the per-frame outer products x x^H, normalized by the summed
mask. Scaling it by a per-bin power spectral density yields the
time-varying SCM; the Wiener filter at each bin is then
W = R_s (R_s + R_n)^-1, with posterior covariance Psi = (I - W) R_s.
Every step is composed from tape operations, so the whole chain is
differentiable with respect to masks, PSDs, and the observed spectrogram.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .complex_ops import ComplexTensor, complex_matmul, hermitian_inverse
from .errors import NegativePsd, NonFiniteInput, ShapeMismatch, ZeroMaskColumn
from .stft import Spectrogram

__all__ = [
    "MaskPsdSet",
    "ScmField",
    "estimate_time_invariant_scm",
    "scale_time_varying",
    "wiener_filter",
    "apply_mwf",
    "posterior_covariance",
]

MWF_EPS_DEFAULT = 1e-6


@dataclass
class MaskPsdSet:
    """Speech/noise T-F masks in [0, 1] and nonnegative per-bin PSDs."""

    mask_s: Tensor
    mask_n: Tensor
    psd_s: Tensor
    psd_n: Tensor

    def __post_init__(self):
        self.mask_s = as_tensor(self.mask_s)
        self.mask_n = as_tensor(self.mask_n)
        self.psd_s = as_tensor(self.psd_s)
        self.psd_n = as_tensor(self.psd_n)
        shapes = {t.shape for t in (self.mask_s, self.mask_n, self.psd_s, self.psd_n)}
        if len(shapes) != 1:
            raise ShapeMismatch(f"mask/psd shapes differ: {shapes}")
        for name in ("mask_s", "mask_n", "psd_s", "psd_n"):
            arr = getattr(self, name).data
            if not np.all(np.isfinite(arr)):
                raise NonFiniteInput(f"{name} contains non-finite values")
        for name in ("mask_s", "mask_n"):
            arr = getattr(self, name).data
            if arr.min(initial=0.0) < 0.0 or arr.max(initial=0.0) > 1.0:
                raise NegativePsd(f"{name} outside [0, 1]")
        for name in ("psd_s", "psd_n"):
            if getattr(self, name).data.min(initial=0.0) < 0.0:
                raise NegativePsd(f"{name} has negative entries")


@dataclass
class ScmField:
    """Per-source spatial covariances: time-invariant (F,K,K) and
    time-varying (T,F,K,K)."""

    speech_inv: ComplexTensor
    noise_inv: ComplexTensor
    speech_tv: ComplexTensor
    noise_tv: ComplexTensor

    @classmethod
    def from_masks(
        cls,
        observed: Spectrogram,
        masks: MaskPsdSet,
        noise_time_varying: bool = True,
    ) -> "ScmField":
        """Estimate both sources' SCMs from the observed mixture.

        With ``noise_time_varying=False`` the noise keeps its time-invariant
        SCM at every frame (unit PSD scaling).
        """
        r_s = estimate_time_invariant_scm(observed, masks.mask_s)
        r_n = estimate_time_invariant_scm(observed, masks.mask_n)
        speech_tv = scale_time_varying(r_s, masks.psd_s)
        if noise_time_varying:
            noise_tv = scale_time_varying(r_n, masks.psd_n)
        else:
            ones = Tensor(np.ones(masks.psd_n.shape))
            noise_tv = scale_time_varying(r_n, ones)
        return cls(r_s, r_n, speech_tv, noise_tv)

    def check_psd(self, tol=1e-8):
        """Hermitian / PSD diagnostics on the current values (tests only)."""
        for name in ("speech_inv", "noise_inv", "speech_tv", "noise_tv"):
            m = getattr(self, name).numpy()
            herm = np.abs(m - np.conj(np.swapaxes(m, -1, -2))).max()
            if herm > tol:
                return False
            if np.linalg.eigvalsh(m).min() < -tol:
                return False
        return True


def estimate_time_invariant_scm(observed: Spectrogram, mask) -> ComplexTensor:
    """Mask-weighted average of per-frame outer products, per frequency.

    Returns an (F, K, K) complex tensor, Hermitian PSD by construction and
    differentiable with respect to both the mask and the spectrogram.
    """
    mask = as_tensor(mask)
    t, f, k = observed.data.shape
    if mask.shape != (t, f):
        raise ShapeMismatch(f"mask shape {mask.shape} does not match frames/bins ({t}, {f})")
    if mask.data.min(initial=0.0) < 0.0:
        raise NegativePsd("mask weights must be nonnegative")
    colsum = mask.data.sum(axis=0)
    if colsum.min(initial=np.inf) < 1e-12:
        worst = int(np.argmin(colsum))
        raise ZeroMaskColumn(f"mask sums to {colsum.min():.3g} at frequency bin {worst}")

    col = observed.data.reshape((t, f, k, 1))
    outer = complex_matmul(col, col.hermitian())  # (T, F, K, K)
    weights = ad.reshape(mask, (t, f, 1, 1))
    numer_re = ad.tensor_sum(ad.mul(outer.re, weights), axis=0)
    numer_im = ad.tensor_sum(ad.mul(outer.im, weights), axis=0)
    denom = ad.reshape(ad.tensor_sum(mask, axis=0), (f, 1, 1))
    return ComplexTensor(ad.div(numer_re, denom), ad.div(numer_im, denom))


def scale_time_varying(scm: ComplexTensor, psd) -> ComplexTensor:
    """Scale an (F, K, K) SCM by a (T, F) PSD into a (T, F, K, K) field."""
    psd = as_tensor(psd)
    if psd.ndim != 2:
        raise ShapeMismatch(f"psd must be (T, F), got {psd.shape}")
    if scm.ndim != 3 or psd.shape[1] != scm.shape[0]:
        raise ShapeMismatch(f"scm {scm.shape} does not match psd {psd.shape}")
    if psd.data.min(initial=0.0) < 0.0:
        raise NegativePsd("psd must be nonnegative")
    t, f = psd.shape
    weights = ad.reshape(psd, (t, f, 1, 1))
    return scm.scale(weights)


def wiener_filter(r_s: ComplexTensor, r_n: ComplexTensor, eps: float = MWF_EPS_DEFAULT) -> ComplexTensor:
    """Per-bin multi-channel Wiener filter W = R_s (R_s + R_n)^-1.

    eps is the trace-relative regularization applied inside the inversion.
    """
    if r_s.shape != r_n.shape:
        raise ShapeMismatch(f"SCM field shapes differ: {r_s.shape} vs {r_n.shape}")
    inv = hermitian_inverse(r_s + r_n, eps)
    return complex_matmul(r_s, inv)


def apply_mwf(w: ComplexTensor, observed: Spectrogram) -> Spectrogram:
    """Apply a (T, F, K, K) filter field per bin: y = W x."""
    t, f, k = observed.data.shape
    if w.shape != (t, f, k, k):
        raise ShapeMismatch(f"filter field {w.shape} does not fit spectrogram shape {(t, f, k)}")
    col = observed.data.reshape((t, f, k, 1))
    est = complex_matmul(w, col).reshape((t, f, k))
    return Spectrogram(est, observed.config, observed.num_samples)


def posterior_covariance(w: ComplexTensor, r_s: ComplexTensor) -> ComplexTensor:
    """Posterior covariance Psi = (I - W) R_s, Hermitian-symmetrized.

    The analytic Psi is Hermitian; averaging with its conjugate transpose
    bounds the floating-point asymmetry the downstream inverse would reject.
    """
    if w.shape != r_s.shape:
        raise ShapeMismatch(f"shapes differ: {w.shape} vs {r_s.shape}")
    k = w.shape[-1]
    eye = ComplexTensor.from_numpy(np.eye(k).astype(complex))
    i_minus_w = ComplexTensor(ad.sub(eye.re, w.re), ad.sub(eye.im, w.im))
    psi = complex_matmul(i_minus_w, r_s)
    return (psi + psi.hermitian()).scale(0.5)
