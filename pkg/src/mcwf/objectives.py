"""Training objectives.

All objectives return an :class:`ObjectiveValue` whose scalar ``total``
lives on the caller's tape, so gradients flow back through the Wiener
filter, the SCM estimates, and (where applicable) the iSTFT or the
consistency projection.

Objective kinds:

- ``base``: per-bin Gaussian posterior negative log-likelihood
  d^H Psi^-1 d + logdet(Psi) with d = clean - estimate, summed over bins.
- ``mwa``: multi-channel wave approximation, the l1 distance between the
  per-channel iSTFTs of the clean and estimated spectrograms.
- ``multi``: base plus lam * sum_k ||S_k - P(est_k)||_Fro^2, where P is
  the consistency projection.
- ``psa`` / ``psa_proj``: monaural phase-sensitive approximation on a
  masked mixture, optionally projecting the masked estimate first.
- ``wa``: monaural wave approximation of the masked mixture.

Per-utterance losses are summed over frames, bins, and channels; batch
aggregation (mean over utterances) is the trainer's job.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .complex_ops import ComplexTensor, complex_matmul, hermitian_inverse, hermitian_logdet
from .errors import ConfigMismatch, DomainError, NonHermitianPsi, ShapeMismatch
from .stft import Spectrogram, istft, project_consistent

__all__ = [
    "ObjectiveValue",
    "ObjectiveConfig",
    "OBJECTIVE_KINDS",
    "loss_base",
    "loss_mwa",
    "loss_multi",
    "loss_psa",
    "loss_wa_monaural",
]

OBJECTIVE_KINDS = ("base", "mwa", "multi", "psa", "psa_proj", "wa")

PSI_EPS_DEFAULT = 1e-5


@dataclass
class ObjectiveValue:
    """Scalar objective plus its named term breakdown (all on the tape)."""

    total: Tensor
    terms: dict


@dataclass
class ObjectiveConfig:
    kind: str = "multi"
    lam: float = 1.0  # weight of the consistency term in 'multi'
    psi_eps: float = PSI_EPS_DEFAULT  # trace-relative Psi regularization

    def __post_init__(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise DomainError(f"unknown objective kind '{self.kind}'")
        if self.lam < 0 or self.psi_eps < 0:
            raise DomainError("lam and psi_eps must be nonnegative")


def _check_same_grid(a: Spectrogram, b: Spectrogram):
    if a.config != b.config or a.num_samples != b.num_samples:
        raise ConfigMismatch("spectrograms use different STFT configs or lengths")
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"spectrogram shapes differ: {a.data.shape} vs {b.data.shape}")


def loss_base(
    clean: Spectrogram,
    est: Spectrogram,
    psi: ComplexTensor,
    cfg: ObjectiveConfig | None = None,
) -> ObjectiveValue:
    """Gaussian posterior NLL: sum over bins of d^H Psi^-1 d + logdet Psi.

    Psi is regularized trace-relatively by ``cfg.psi_eps`` inside both the
    inverse and the log-determinant. The quadratic form is analytically
    real; its floating-point imaginary residue is asserted below
    1e-9 relative and discarded.
    """
    cfg = cfg or ObjectiveConfig(kind="base")
    _check_same_grid(clean, est)
    t, f, k = clean.data.shape
    if psi.shape != (t, f, k, k):
        raise ShapeMismatch(f"psi field {psi.shape} does not fit ({t}, {f}, {k}, {k})")
    psi_val = psi.numpy()
    herm_err = np.abs(psi_val - np.conj(np.swapaxes(psi_val, -1, -2))).max()
    if herm_err > 1e-8 * max(1.0, np.abs(psi_val).max()):
        raise NonHermitianPsi(f"posterior covariance asymmetry {herm_err:.3g}")

    d = (clean.data - est.data).reshape((t, f, k, 1))
    inv = hermitian_inverse(psi, cfg.psi_eps)
    quad = complex_matmul(d.hermitian(), complex_matmul(inv, d))  # (T, F, 1, 1)
    imag_max = np.abs(quad.im.data).max()
    real_scale = max(np.abs(quad.re.data).max(), 1e-30)
    if imag_max > 1e-9 * real_scale:
        raise DomainError(f"quadratic form imaginary residue {imag_max:.3g} too large")
    quad_sum = ad.tensor_sum(quad.re)
    logdet_sum = ad.tensor_sum(hermitian_logdet(psi, cfg.psi_eps))
    total = ad.add(quad_sum, logdet_sum)
    return ObjectiveValue(total, {"quadratic": quad_sum, "logdet": logdet_sum})


def loss_mwa(clean: Spectrogram, est: Spectrogram) -> ObjectiveValue:
    """Multi-channel wave approximation: sum_k || istft(S_k) - istft(est_k) ||_1."""
    _check_same_grid(clean, est)
    diff = ad.absolute(ad.sub(istft(clean), istft(est)))  # (n, K)
    per_channel = ad.tensor_sum(diff, axis=0)
    total = ad.tensor_sum(per_channel)
    terms = {
        f"wa_ch{k}": ad.take_index(per_channel, k, axis=0)
        for k in range(clean.num_channels)
    }
    return ObjectiveValue(total, terms)


def loss_multi(
    clean: Spectrogram,
    est: Spectrogram,
    psi: ComplexTensor,
    cfg: ObjectiveConfig | None = None,
) -> ObjectiveValue:
    """Gaussian NLL plus lam * sum_k ||S_k - P(est_k)||_Fro^2."""
    cfg = cfg or ObjectiveConfig(kind="multi")
    nll = loss_base(clean, est, psi, cfg)
    proj = project_consistent(est)
    resid = clean.data - proj.data
    consistency = ad.mul(ad.tensor_sum(resid.abs2()), cfg.lam)
    total = ad.add(nll.total, consistency)
    return ObjectiveValue(total, {"nll": nll.total, "consistency": consistency})


def _single_channel_complex(spec: Spectrogram) -> np.ndarray:
    if spec.num_channels != 1:
        raise ShapeMismatch(f"expected a 1-channel spectrogram, got {spec.num_channels}")
    return spec.numpy()[:, :, 0]


def _masked_mixture(noisy_ref: Spectrogram, mask) -> ComplexTensor:
    mask = as_tensor(mask)
    t, f, _ = noisy_ref.data.shape
    if mask.shape != (t, f):
        raise ShapeMismatch(f"mask shape {mask.shape} does not match ({t}, {f})")
    if mask.data.min(initial=0.0) < 0.0 or mask.data.max(initial=0.0) > 1.0:
        raise DomainError("mask must lie in [0, 1]")
    x = _single_channel_complex(noisy_ref)
    return ComplexTensor(ad.mul(mask, x.real), ad.mul(mask, x.imag))


def loss_psa(
    clean_ref: Spectrogram,
    noisy_ref: Spectrogram,
    mask,
    projected: bool = False,
) -> ObjectiveValue:
    """Phase-sensitive approximation on the reference channel.

    The target is the truncated phase-aligned magnitude
    T = clip(|S| cos(angle(S) - angle(X)), 0, |X|) carried on the mixture
    phase; the loss is the complex squared error between the (optionally
    consistency-projected) masked mixture and T * exp(i angle(X)). For an
    unprojected masked mixture this equals the classic magnitude-domain
    PSA because the mixture phasor factors out of the error.
    """
    _check_same_grid(clean_ref, noisy_ref)
    s = _single_channel_complex(clean_ref)
    x = _single_channel_complex(noisy_ref)
    mag_x = np.abs(x)
    safe = np.maximum(mag_x, 1e-300)
    target_mag = np.clip(np.real(s * np.conj(x)) / safe, 0.0, mag_x)
    phasor = np.where(mag_x > 0, x / safe, 0.0)
    target = target_mag * phasor

    est = _masked_mixture(noisy_ref, mask)
    if projected:
        t, f = mag_x.shape
        est_spec = Spectrogram(
            est.reshape((t, f, 1)), noisy_ref.config, noisy_ref.num_samples
        )
        est = project_consistent(est_spec).data.reshape((t, f))
    err_re = ad.sub(est.re, target.real)
    err_im = ad.sub(est.im, target.imag)
    total = ad.tensor_sum(ad.add(ad.square(err_re), ad.square(err_im)))
    name = "psa_proj" if projected else "psa"
    return ObjectiveValue(total, {name: total})


def loss_wa_monaural(clean_ref: Spectrogram, noisy_ref: Spectrogram, mask) -> ObjectiveValue:
    """Monaural wave approximation: l1 between istft(M * X) and istft(S)."""
    _check_same_grid(clean_ref, noisy_ref)
    t, f, _ = noisy_ref.data.shape
    est = _masked_mixture(noisy_ref, mask)
    est_spec = Spectrogram(est.reshape((t, f, 1)), noisy_ref.config, noisy_ref.num_samples)
    diff = ad.absolute(ad.sub(istft(est_spec), istft(clean_ref)))
    total = ad.tensor_sum(diff)
    return ObjectiveValue(total, {"wa": total})
