"""End-to-end enhancement glue shared by training, the CLI, and the tests.

Connects mask/PSD estimates (from the network or from oracle references)
to the SCM -> Wiener filter -> estimate chain, and dispatches the per-item
training objective by kind.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .baselines import apply_beamformer, mvdr_from_masks, tf_mask_enhance
from .enhance import (
    MWF_EPS_DEFAULT,
    MaskPsdSet,
    ScmField,
    apply_mwf,
    posterior_covariance,
    wiener_filter,
)
from .errors import DomainError
from .model import FeatureBlock, extract_features
from .objectives import (
    ObjectiveConfig,
    ObjectiveValue,
    loss_base,
    loss_multi,
    loss_mwa,
    loss_psa,
    loss_wa_monaural,
)
from .stft import Spectrogram, istft

__all__ = [
    "TrainItem",
    "make_train_item",
    "objective_for_item",
    "oracle_mask_psd",
    "mwf_enhance",
    "enhance_spectrogram",
    "waveform",
]


@dataclass
class TrainItem:
    """One supervised example: mixture and clean target on the same grid."""

    observed: Spectrogram
    clean: Spectrogram
    features: FeatureBlock


def make_train_item(observed: Spectrogram, clean: Spectrogram) -> TrainItem:
    return TrainItem(observed, clean, extract_features(observed))


def mwf_enhance(
    observed: Spectrogram,
    masks: MaskPsdSet,
    mwf_eps: float = MWF_EPS_DEFAULT,
    noise_time_varying: bool = True,
    with_psi: bool = True,
):
    """Masks/PSDs -> SCM field -> Wiener filter -> estimate (+ posterior cov)."""
    field = ScmField.from_masks(observed, masks, noise_time_varying=noise_time_varying)
    w = wiener_filter(field.speech_tv, field.noise_tv, eps=mwf_eps)
    est = apply_mwf(w, observed)
    psi = posterior_covariance(w, field.speech_tv) if with_psi else None
    return est, psi


def objective_for_item(masks: MaskPsdSet, item: TrainItem, cfg: ObjectiveConfig) -> ObjectiveValue:
    """Per-kind training objective through the matching pipeline."""
    kind = cfg.kind
    if kind in ("base", "mwa", "multi"):
        est, psi = mwf_enhance(item.observed, masks, with_psi=kind != "mwa")
        if kind == "base":
            return loss_base(item.clean, est, psi, cfg)
        if kind == "mwa":
            return loss_mwa(item.clean, est)
        return loss_multi(item.clean, est, psi, cfg)
    clean_ref = item.clean.channel(0)
    noisy_ref = item.observed.channel(0)
    if kind == "psa":
        return loss_psa(clean_ref, noisy_ref, masks.mask_s, projected=False)
    if kind == "psa_proj":
        return loss_psa(clean_ref, noisy_ref, masks.mask_s, projected=True)
    if kind == "wa":
        return loss_wa_monaural(clean_ref, noisy_ref, masks.mask_s)
    raise DomainError(f"unknown objective kind '{kind}'")


def oracle_mask_psd(speech: Spectrogram, noise: Spectrogram, ref_channel: int = 0) -> MaskPsdSet:
    """Ideal masks/PSDs from the clean references.

    Masks are the reference-channel Wiener-style power ratios
    |S|^2 / (|S|^2 + |N|^2); PSDs are the reference-channel powers.
    Bins where both references vanish get mask 0.5.
    """
    s2 = np.abs(speech.numpy()[:, :, ref_channel]) ** 2
    n2 = np.abs(noise.numpy()[:, :, ref_channel]) ** 2
    denom = s2 + n2
    mask_s = np.where(denom > 0, s2 / np.maximum(denom, 1e-300), 0.5)
    mask_n = np.where(denom > 0, n2 / np.maximum(denom, 1e-300), 0.5)
    return MaskPsdSet(Tensor(mask_s), Tensor(mask_n), Tensor(s2), Tensor(n2))


def enhance_spectrogram(
    observed: Spectrogram,
    masks: MaskPsdSet,
    method: str = "mwf",
    ref_channel: int = 0,
    mwf_eps: float = MWF_EPS_DEFAULT,
    noise_time_varying: bool = True,
    identity_filter: bool = False,
) -> Spectrogram:
    """Enhance with one of the three methods; output is single-channel
    (the reference channel for 'mwf').

    ``identity_filter`` is a debug switch that replaces the Wiener filter
    with the identity, so the output equals the observed reference channel.
    """
    if method == "mwf":
        if identity_filter:
            est = observed
        else:
            est, _ = mwf_enhance(
                observed,
                masks,
                mwf_eps=mwf_eps,
                noise_time_varying=noise_time_varying,
                with_psi=False,
            )
        return est.channel(ref_channel)
    if method == "mask":
        return tf_mask_enhance(observed, masks.mask_s.data, ref_channel)
    if method == "mvdr":
        bf = mvdr_from_masks(observed, masks.mask_s.data, masks.mask_n.data, ref_channel)
        return apply_beamformer(bf, observed)
    raise DomainError(f"unknown enhancement method '{method}'")


def waveform(spec: Spectrogram) -> np.ndarray:
    """Constant-path iSTFT to a plain (num_samples, K) array."""
    return istft(spec).data
