"""Feature extraction, the trainable mask/PSD estimator, and its optimizer.

Features per utterance: normalized log10 channel amplitudes plus the
cos/sin of the inter-channel phase difference against channel 0. The
estimator is a compact feedforward network over a +-context window of
frames with four heads: speech/noise masks through a sigmoid and
speech/noise PSDs through a softplus, one value per T-F bin each.

Training state is functional: ``train_step`` builds a fresh tape, runs
the full pipeline for a batch, backpropagates, and applies one Adam
update in place. The learning rate halves when validation loss has not
improved for three consecutive epochs.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import GradientTape, Tensor
from .enhance import MaskPsdSet
from .errors import NonFiniteLoss, ShapeMismatch
from .stft import Spectrogram

__all__ = [
    "FeatureBlock",
    "ModelParams",
    "OptimizerState",
    "extract_features",
    "model_forward",
    "watch_params",
    "init_model",
    "adam_update",
    "train_step",
    "lr_schedule",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_VERSION = 1


@dataclass
class FeatureBlock:
    """Per-utterance input features (plain arrays, never on a tape)."""

    log_amp: np.ndarray  # (T, F, K), normalized
    cos_ipd: np.ndarray  # (T, F, K-1), channel k vs channel 0
    sin_ipd: np.ndarray  # (T, F, K-1)


def extract_features(x: Spectrogram, delta: float = 1e-4, per_bin: bool = True) -> FeatureBlock:
    """log10(|X| + delta) amplitudes with utterance-level mean/variance
    normalization, plus cos/sin inter-channel phase differences.

    ``per_bin=True`` normalizes each (bin, channel) feature over time;
    ``False`` normalizes each channel over the whole utterance. Features
    whose variance is below 1e-12 normalize to zero.
    """
    spec = x.numpy()
    amp = np.log10(np.abs(spec) + delta)
    if per_bin:
        mean = amp.mean(axis=0, keepdims=True)
        var = amp.var(axis=0, keepdims=True)
    else:
        mean = amp.mean(axis=(0, 1), keepdims=True)
        var = amp.var(axis=(0, 1), keepdims=True)
    log_amp = np.where(var < 1e-12, 0.0, (amp - mean) / np.sqrt(np.maximum(var, 1e-12)))

    phase = np.angle(spec)
    ipd = phase[:, :, 1:] - phase[:, :, :1]
    return FeatureBlock(log_amp=log_amp, cos_ipd=np.cos(ipd), sin_ipd=np.sin(ipd))


@dataclass
class ModelParams:
    """Compact feedforward mask/PSD estimator."""

    num_bins: int
    num_channels: int = 2
    hidden: int = 64
    num_layers: int = 2
    context: int = 2
    params: dict = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        per_frame = self.num_bins * (self.num_channels + 2 * (self.num_channels - 1))
        return per_frame * (2 * self.context + 1)

    def head_names(self):
        return ("mask_s", "mask_n", "psd_s", "psd_n")


def init_model(
    rng: np.random.Generator,
    num_bins: int,
    num_channels: int = 2,
    hidden: int = 64,
    num_layers: int = 2,
    context: int = 2,
) -> ModelParams:
    """Glorot-uniform initialization; deterministic given the generator."""
    model = ModelParams(num_bins, num_channels, hidden, num_layers, context)

    def glorot(fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    dim = model.input_dim
    for i in range(num_layers):
        model.params[f"w{i}"] = glorot(dim, hidden)
        model.params[f"b{i}"] = np.zeros(hidden)
        dim = hidden
    for head in model.head_names():
        model.params[f"w_{head}"] = glorot(dim, num_bins)
        model.params[f"b_{head}"] = np.zeros(num_bins)
    return model


def _assemble_input(model: ModelParams, feats: FeatureBlock) -> np.ndarray:
    """Flatten features per frame and stack a +-context window (edge-clamped)."""
    t = feats.log_amp.shape[0]
    if feats.log_amp.shape[1] != model.num_bins or feats.log_amp.shape[2] != model.num_channels:
        raise ShapeMismatch(
            f"features {feats.log_amp.shape} do not match model "
            f"({model.num_bins} bins, {model.num_channels} channels)"
        )
    base = np.concatenate(
        [
            feats.log_amp.reshape(t, -1),
            feats.cos_ipd.reshape(t, -1),
            feats.sin_ipd.reshape(t, -1),
        ],
        axis=1,
    )
    if model.context == 0:
        return base
    pieces = []
    for offset in range(-model.context, model.context + 1):
        idx = np.clip(np.arange(t) + offset, 0, t - 1)
        pieces.append(base[idx])
    return np.concatenate(pieces, axis=1)


def watch_params(tape: GradientTape, model: ModelParams) -> dict:
    return {name: tape.watch(arr) for name, arr in model.params.items()}


def model_forward(model: ModelParams, feats: FeatureBlock, param_tensors=None) -> MaskPsdSet:
    """Run the estimator; when ``param_tensors`` (watched leaves) are given
    the outputs are recorded for backprop, otherwise this is inference."""
    pt = param_tensors or {name: Tensor(arr) for name, arr in model.params.items()}
    h = Tensor(_assemble_input(model, feats))
    for i in range(model.num_layers):
        h = ad.tanh(ad.add(ad.matmul(h, pt[f"w{i}"]), pt[f"b{i}"]))
    heads = {}
    for head in model.head_names():
        z = ad.add(ad.matmul(h, pt[f"w_{head}"]), pt[f"b_{head}"])
        heads[head] = ad.sigmoid(z) if head.startswith("mask") else ad.softplus(z)
    return MaskPsdSet(heads["mask_s"], heads["mask_n"], heads["psd_s"], heads["psd_n"])


@dataclass
class OptimizerState:
    """Adam moments plus the plateau-halving schedule state."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    best_val: float | None = None
    bad_epochs: int = 0
    plateau_patience: int = 3

    def ensure_slots(self, model: ModelParams):
        for name, arr in model.params.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(arr)
                self.v[name] = np.zeros_like(arr)


def adam_update(model: ModelParams, opt: OptimizerState, grads: dict):
    """One bias-corrected Adam step, in place."""
    opt.ensure_slots(model)
    opt.step += 1
    c1 = 1.0 - opt.beta1**opt.step
    c2 = 1.0 - opt.beta2**opt.step
    for name, g in grads.items():
        opt.m[name] = opt.beta1 * opt.m[name] + (1.0 - opt.beta1) * g
        opt.v[name] = opt.beta2 * opt.v[name] + (1.0 - opt.beta2) * (g * g)
        m_hat = opt.m[name] / c1
        v_hat = opt.v[name] / c2
        model.params[name] -= opt.lr * m_hat / (np.sqrt(v_hat) + opt.eps)


def lr_schedule(opt: OptimizerState, validation_loss: float) -> OptimizerState:
    """Halve the learning rate after ``plateau_patience`` consecutive epochs
    without a strictly lower validation loss; reset the counter on
    improvement and after each halving. The rate never increases."""
    if opt.best_val is None or validation_loss < opt.best_val:
        opt.best_val = validation_loss
        opt.bad_epochs = 0
        return opt
    opt.bad_epochs += 1
    if opt.bad_epochs >= opt.plateau_patience:
        opt.lr *= 0.5
        opt.bad_epochs = 0
    return opt


def train_step(model: ModelParams, opt: OptimizerState, batch, objective_cfg) -> float:
    """Forward + backward + Adam over one batch; returns the pre-update loss.

    ``batch`` is a sequence of items accepted by
    :func:`mcwf.pipeline.objective_for_item` (observed/clean spectrograms
    and precomputed features). The batch loss is the mean of per-item
    objective totals.
    """
    from .pipeline import objective_for_item  # local import avoids a cycle

    if not batch:
        raise ShapeMismatch("empty batch")
    tape = GradientTape()
    pt = watch_params(tape, model)
    total = None
    for item in batch:
        masks = model_forward(model, item.features, param_tensors=pt)
        value = objective_for_item(masks, item, objective_cfg).total
        total = value if total is None else ad.add(total, value)
    loss = ad.mul(total, 1.0 / len(batch))
    loss_value = float(loss.data)
    if not np.isfinite(loss_value):
        culprit = tape.first_nonfinite()
        where = f"op '{culprit[0]}' (node {culprit[1]})" if culprit else "an unrecorded value"
        raise NonFiniteLoss(f"training loss is {loss_value}; first non-finite tensor: {where}")
    grads = tape.backward(loss)
    adam_update(model, opt, {name: grads[pt[name].tape_id] for name in pt})
    return loss_value


# ---------------------------------------------------------------------------
# checkpoint container (versioned JSON; arrays as little-endian f8 base64)


def _encode(arr: np.ndarray) -> dict:
    return {
        "shape": list(arr.shape),
        "data": base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode(),
    }


def _decode(entry: dict) -> np.ndarray:
    raw = base64.b64decode(entry["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).copy()


def save_checkpoint(path, model: ModelParams, opt: OptimizerState, rng_state=None, extra=None):
    """Bit-exact round trip: every float64 is serialized as raw bytes."""
    opt.ensure_slots(model)
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "kind": "mcwf-checkpoint",
        "model": {
            "num_bins": model.num_bins,
            "num_channels": model.num_channels,
            "hidden": model.hidden,
            "num_layers": model.num_layers,
            "context": model.context,
        },
        "params": {name: _encode(arr) for name, arr in model.params.items()},
        "optimizer": {
            "lr": opt.lr,
            "beta1": opt.beta1,
            "beta2": opt.beta2,
            "eps": opt.eps,
            "step": opt.step,
            "best_val": opt.best_val,
            "bad_epochs": opt.bad_epochs,
            "plateau_patience": opt.plateau_patience,
            "m": {name: _encode(arr) for name, arr in opt.m.items()},
            "v": {name: _encode(arr) for name, arr in opt.v.items()},
        },
        "rng_state": rng_state,
        "extra": extra or {},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_checkpoint(path):
    """Returns (model, optimizer, rng_state, extra)."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('format_version')}")
    m = doc["model"]
    model = ModelParams(
        num_bins=m["num_bins"],
        num_channels=m["num_channels"],
        hidden=m["hidden"],
        num_layers=m["num_layers"],
        context=m["context"],
        params={name: _decode(entry) for name, entry in doc["params"].items()},
    )
    o = doc["optimizer"]
    opt = OptimizerState(
        lr=o["lr"],
        beta1=o["beta1"],
        beta2=o["beta2"],
        eps=o["eps"],
        step=o["step"],
        best_val=o["best_val"],
        bad_epochs=o["bad_epochs"],
        plateau_patience=o["plateau_patience"],
        m={name: _decode(entry) for name, entry in o["m"].items()},
        v={name: _decode(entry) for name, entry in o["v"].items()},
    )
    return model, opt, doc.get("rng_state"), doc.get("extra", {})
