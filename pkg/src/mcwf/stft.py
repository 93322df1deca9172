"""Multi-channel STFT analysis/synthesis and the consistency projection.

Analysis windows a Hann-tapered frame and takes the one-sided real FFT per
channel. Synthesis is weighted overlap-add with the same window and
pointwise division by the summed squared-window envelope, which makes
istft(stft(x)) = x to round-off for any config whose envelope has no
interior zeros. Both transforms are linear, and both are recorded on the
gradient tape with hand-derived adjoints, so losses differentiate through
them exactly.

The projection onto consistent spectrograms, stft(istft(.)), is composed
from the two transforms and is therefore idempotent and differentiable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .complex_ops import ComplexTensor
from .errors import InvalidConfig, NonFiniteInput, TooShort

__all__ = [
    "StftConfig",
    "Spectrogram",
    "stft",
    "istft",
    "project_consistent",
    "inconsistency",
]


@dataclass(frozen=True)
class StftConfig:
    """Analysis parameters. Defaults are 16 kHz, 32 ms Hann, 8 ms hop."""

    sample_rate: int = 16000
    win_len: int = 512
    hop: int = 128
    window: str = "hann"
    fft_size: int = 0  # 0 means "equal to win_len"
    center_padding: bool = True

    def __post_init__(self):
        if self.fft_size == 0:
            object.__setattr__(self, "fft_size", self.win_len)
        if self.win_len <= 0 or self.hop <= 0:
            raise InvalidConfig("win_len and hop must be positive")
        if self.win_len % self.hop != 0:
            raise InvalidConfig("hop must divide win_len")
        if self.fft_size != self.win_len:
            raise InvalidConfig("fft_size must equal win_len")
        if self.window != "hann":
            raise InvalidConfig(f"unsupported window kind '{self.window}'")

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1


@lru_cache(maxsize=32)
def _window(cfg: StftConfig) -> np.ndarray:
    n = np.arange(cfg.win_len)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / cfg.win_len)  # periodic Hann


def _layout(num_samples: int, cfg: StftConfig):
    """Frame count, left pad, and padded length for a given signal length."""
    if num_samples <= 0:
        raise TooShort("signal is empty")
    if cfg.center_padding:
        left = cfg.win_len // 2
        t = math.ceil(num_samples / cfg.hop)
        # enough frames that synthesis covers the trimmed region even for
        # large hops; equals ceil(n/hop) whenever hop <= win_len/2
        t = max(t, math.ceil((num_samples + left - cfg.win_len) / cfg.hop) + 1)
    else:
        if num_samples < cfg.win_len:
            raise TooShort(
                f"{num_samples} samples < win_len {cfg.win_len} and center padding is off"
            )
        left = 0
        t = 1 + (num_samples - cfg.win_len) // cfg.hop
    total = (t - 1) * cfg.hop + cfg.win_len
    return t, left, total


@lru_cache(maxsize=64)
def _reflect_map(num_samples: int, left: int, total: int) -> np.ndarray:
    """Indices into the source signal for each padded position (reflection)."""
    p = np.arange(-left, total - left)
    if num_samples == 1:
        return np.zeros(total, dtype=np.intp)
    period = 2 * (num_samples - 1)
    m = np.mod(p, period)
    return np.where(m < num_samples, m, period - m).astype(np.intp)


@lru_cache(maxsize=64)
def _envelope(t: int, total: int, cfg: StftConfig) -> np.ndarray:
    w2 = _window(cfg) ** 2
    env = np.zeros(total)
    for i in range(t):
        env[i * cfg.hop : i * cfg.hop + cfg.win_len] += w2
    return env


def _rfft_adjoint(g: np.ndarray, n: int, axis: int) -> np.ndarray:
    """Adjoint of the one-sided real FFT (complex cotangent -> real)."""
    h = g * 0.5
    sl0 = [slice(None)] * h.ndim
    sl0[axis] = 0
    h[tuple(sl0)] *= 2.0
    if n % 2 == 0:
        sln = [slice(None)] * h.ndim
        sln[axis] = -1
        h[tuple(sln)] *= 2.0
    return n * np.fft.irfft(h, n=n, axis=axis)


def _irfft_adjoint(g: np.ndarray, n: int, axis: int) -> np.ndarray:
    """Adjoint of the one-sided inverse real FFT (real cotangent -> complex)."""
    out = np.fft.rfft(g, n=n, axis=axis) * (2.0 / n)
    sl0 = [slice(None)] * out.ndim
    sl0[axis] = 0
    out[tuple(sl0)] *= 0.5
    if n % 2 == 0:
        sln = [slice(None)] * out.ndim
        sln[axis] = -1
        out[tuple(sln)] *= 0.5
    return out


@dataclass
class Spectrogram:
    """Complex (frames, bins, channels) array plus its analysis parameters."""

    data: ComplexTensor
    config: StftConfig
    num_samples: int

    def __post_init__(self):
        if self.data.ndim != 3:
            raise InvalidConfig(f"spectrogram data must be (T, F, K), got {self.data.shape}")
        if self.data.shape[1] != self.config.num_bins:
            raise InvalidConfig(
                f"{self.data.shape[1]} bins inconsistent with fft_size {self.config.fft_size}"
            )

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def num_bins(self) -> int:
        return self.data.shape[1]

    @property
    def num_channels(self) -> int:
        return self.data.shape[2]

    def numpy(self) -> np.ndarray:
        return self.data.numpy()

    def channel(self, k: int) -> "Spectrogram":
        """Single-channel view (constant data only)."""
        if self.data.re.tape is not None or self.data.im.tape is not None:
            raise InvalidConfig("channel() supports constant spectrograms only")
        sliced = ComplexTensor(
            Tensor(self.data.re.data[:, :, k : k + 1]),
            Tensor(self.data.im.data[:, :, k : k + 1]),
        )
        return Spectrogram(sliced, self.config, self.num_samples)


def _coerce_signal(x):
    """Accept Tensor / ndarray / TimeSignal-like; return (Tensor, (n, K) data)."""
    if hasattr(x, "samples") and hasattr(x, "sample_rate"):
        x = x.samples
    t = as_tensor(x)
    if t.ndim == 1:
        t = ad.reshape(t, (t.shape[0], 1))
    if t.ndim != 2:
        raise InvalidConfig(f"expected (samples,) or (samples, channels), got {t.shape}")
    return t


def stft(x, config: StftConfig) -> Spectrogram:
    """One-sided multi-channel STFT; linear, recorded on the tape.

    x may be a (n,) or (n, K) array, a tracked Tensor, or a TimeSignal.
    """
    xt = _coerce_signal(x)
    if not np.all(np.isfinite(xt.data)):
        raise NonFiniteInput("stft input contains NaN or infinity")
    n, k = xt.shape
    t, left, total = _layout(n, config)
    idx = _reflect_map(n, left, total)
    w = _window(config)
    nfft = config.fft_size

    def forward(sig):
        padded = sig[idx]  # (total, K)
        frames = np.lib.stride_tricks.sliding_window_view(padded, config.win_len, axis=0)
        frames = frames[:: config.hop]  # (T, K, win)
        spec = np.fft.rfft(frames * w, n=nfft, axis=-1)  # (T, K, F)
        return np.ascontiguousarray(np.swapaxes(spec, 1, 2))  # (T, F, K)

    spec = forward(xt.data)

    def adjoint(g_complex):
        """Map a (T, F, K) complex cotangent back to the (n, K) signal."""
        g_frames = _rfft_adjoint(np.swapaxes(g_complex, 1, 2), nfft, axis=-1)  # (T, K, win)
        g_frames = g_frames * w
        g_padded = np.zeros((total, k))
        for i in range(t):
            g_padded[i * config.hop : i * config.hop + config.win_len] += g_frames[i].T
        g_sig = np.zeros((n, k))
        np.add.at(g_sig, idx, g_padded)
        return g_sig

    def vjp_re(g):
        return (adjoint(g.astype(np.complex128)),)

    def vjp_im(g):
        return (adjoint(1j * g),)

    out_re = ad.custom_op("stft_re", (xt,), np.ascontiguousarray(spec.real), vjp_re)
    out_im = ad.custom_op("stft_im", (xt,), np.ascontiguousarray(spec.imag), vjp_im)
    return Spectrogram(ComplexTensor(out_re, out_im), config, n)


def istft(spec: Spectrogram) -> Tensor:
    """Weighted overlap-add synthesis, trimmed to ``spec.num_samples``.

    Returns a (num_samples, K) tensor; linear and recorded on the tape.
    """
    cfg = spec.config
    n = spec.num_samples
    t_frames, left, total = _layout(n, cfg)
    if t_frames != spec.num_frames:
        raise InvalidConfig(
            f"{spec.num_frames} frames inconsistent with num_samples {n} (expected {t_frames})"
        )
    w = _window(cfg)
    env = _envelope(t_frames, total, cfg)
    stop = min(left + n, total)
    # edge samples covered only by window tails may have a zero envelope
    # (e.g. Hann without center padding at sample 0); they synthesize to 0.
    # Zeros in the fully overlapped interior mean the config cannot be
    # inverted at all.
    safe = env > 1e-12 * env.max()
    margin = cfg.win_len - cfg.hop
    if not np.all(safe[margin : total - margin]):
        raise InvalidConfig("squared-window envelope has zeros in the interior")
    divisor = np.where(safe, env, 1.0)[left:stop, None]
    keep = safe[left:stop, None]
    k = spec.num_channels
    nfft = cfg.fft_size

    def forward(c):
        frames = np.fft.irfft(np.swapaxes(c, 1, 2), n=nfft, axis=-1)  # (T, K, win)
        frames = frames * w
        acc = np.zeros((total, k))
        for i in range(t_frames):
            acc[i * cfg.hop : i * cfg.hop + cfg.win_len] += frames[i].T
        out = np.zeros((n, k))
        out[: stop - left] = np.where(keep, acc[left:stop] / divisor, 0.0)
        return out

    value = forward(spec.numpy())

    def vjp(g):
        acc = np.zeros((total, k))
        acc[left:stop] = np.where(keep, g[: stop - left] / divisor, 0.0)
        g_frames = np.empty((t_frames, k, cfg.win_len))
        for i in range(t_frames):
            g_frames[i] = acc[i * cfg.hop : i * cfg.hop + cfg.win_len].T
        g_frames = g_frames * w
        g_spec = _irfft_adjoint(g_frames, nfft, axis=-1)  # (T, K, F)
        g_spec = np.swapaxes(g_spec, 1, 2)
        return np.ascontiguousarray(g_spec.real), np.ascontiguousarray(g_spec.imag)

    return ad.custom_op("istft", (spec.data.re, spec.data.im), value, vjp)


def project_consistent(spec: Spectrogram) -> Spectrogram:
    """Projection onto the set of consistent spectrograms: stft(istft(.))."""
    return stft(istft(spec), spec.config)


def inconsistency(spec: Spectrogram) -> float:
    """Per-channel Frobenius norm of spec - project_consistent(spec), summed.

    Zero (to round-off) exactly when the spectrogram is consistent.
    A plain diagnostic: works on values and records nothing on any tape.
    """
    const = Spectrogram(ComplexTensor.from_numpy(spec.numpy()), spec.config, spec.num_samples)
    residual = const.numpy() - project_consistent(const).numpy()
    return float(np.sqrt((np.abs(residual) ** 2).sum(axis=(0, 1))).sum())
