"""Evaluation metrics: scalar-gain-invariant SDR and cepstrum distortion.

SDR projects the estimate onto the reference with the optimal scalar gain
before measuring the residual, so any positive rescaling of the estimate
scores identically. CD compares order-24 real cepstra of 32 ms / 8 ms Hann
frames, skipping the gain-carrying zeroth coefficient and frames whose
reference energy marks them silent.

These conventions make the numbers self-consistent within this repo; they
are not calibrated against any external toolkit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import LengthMismatch, NoVoicedFrames, ZeroReference

__all__ = ["sdr", "cepstrum_distortion", "MetricReport"]

SDR_CAP_DB = 100.0
CD_ORDER = 24
_CD_WIN = 512
_CD_HOP = 128
_SILENCE_REL = 1e-8


def _mono(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        if x.shape[1] != 1:
            raise LengthMismatch(f"expected a mono signal, got {x.shape[1]} channels")
        x = x[:, 0]
    return x


def sdr(clean, est) -> float:
    """Gain-invariant signal-to-distortion ratio in dB, capped at +100."""
    s = _mono(clean)
    y = _mono(est)
    if s.size != y.size:
        raise LengthMismatch(f"lengths differ: {s.size} vs {y.size}")
    es = float(s @ s)
    if es <= 0.0:
        raise ZeroReference("reference signal has zero energy")
    alpha = float(s @ y) / es
    target = alpha * s
    num = float(target @ target)
    resid = float(((target - y) ** 2).sum())
    if resid <= num * 1e-10 or resid == 0.0:
        return SDR_CAP_DB
    return min(SDR_CAP_DB, 10.0 * np.log10(num / resid))


def _frames(x: np.ndarray) -> np.ndarray:
    if x.size < _CD_WIN:
        x = np.pad(x, (0, _CD_WIN - x.size))
    t = 1 + (x.size - _CD_WIN) // _CD_HOP
    idx = np.arange(_CD_WIN)[None, :] + _CD_HOP * np.arange(t)[:, None]
    return x[idx]


def _cepstra(frames: np.ndarray) -> np.ndarray:
    w = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(_CD_WIN) / _CD_WIN)
    spec = np.abs(np.fft.rfft(frames * w, axis=1))
    return np.fft.irfft(np.log(np.maximum(spec, 1e-10)), n=_CD_WIN, axis=1)


def cepstrum_distortion(clean, est, order: int = CD_ORDER) -> float:
    """Mean framewise cepstral distance in dB over non-silent frames.

    Per frame: (10/ln 10) * sqrt(2 * sum_{i=1..order} (c_i - c_hat_i)^2).
    Gain differences land in c_0 and do not contribute.
    """
    s = _mono(clean)
    y = _mono(est)
    if s.size != y.size:
        raise LengthMismatch(f"lengths differ: {s.size} vs {y.size}")
    fs = _frames(s)
    fy = _frames(y)
    energy = (fs**2).sum(axis=1)
    voiced = energy >= _SILENCE_REL * max(energy.mean(), 1e-300)
    if not voiced.any():
        raise NoVoicedFrames("all reference frames are silent")
    cs = _cepstra(fs[voiced])[:, 1 : order + 1]
    cy = _cepstra(fy[voiced])[:, 1 : order + 1]
    dist = (10.0 / np.log(10.0)) * np.sqrt(2.0 * ((cs - cy) ** 2).sum(axis=1))
    return float(dist.mean())


@dataclass
class MetricReport:
    """Per-utterance SDR/CD pairs for named systems, plus corpus means."""

    systems: dict = field(default_factory=dict)  # name -> list of {"sdr": ., "cd": .}
    labels: list = field(default_factory=list)  # per-utterance identifiers

    def add(self, system: str, sdr_db: float, cd_db: float):
        self.systems.setdefault(system, []).append({"sdr": sdr_db, "cd": cd_db})

    def means(self) -> dict:
        out = {}
        for name, rows in self.systems.items():
            out[name] = {
                "sdr": float(np.mean([r["sdr"] for r in rows])),
                "cd": float(np.mean([r["cd"] for r in rows])),
            }
        return out

    def to_json(self) -> str:
        return json.dumps(
            {"labels": self.labels, "per_utterance": self.systems, "means": self.means()},
            indent=2,
            sort_keys=True,
        )

    def table(self) -> str:
        """Aligned text table: method, utterance count, mean SDR, mean CD."""
        means = self.means()
        header = f"{'method':<12} {'n':>4} {'SDR [dB]':>10} {'CD [dB]':>10}"
        lines = [header, "-" * len(header)]
        for name in sorted(means):
            m = means[name]
            n = len(self.systems[name])
            lines.append(f"{name:<12} {n:>4} {m['sdr']:>10.2f} {m['cd']:>10.2f}")
        return "\n".join(lines)
