"""RIFF WAV reading and writing.

Files are written as 32-bit float, interleaved channels; 16-bit PCM and
64-bit float inputs are also read (PCM scaled to [-1, 1)). Writing the
same float64 signal twice produces byte-identical files.
"""

from __future__ import annotations

import numpy as np
from scipy.io import wavfile

from .errors import NonFiniteInput
from .scenes import TimeSignal

__all__ = ["read_wav", "write_wav"]


def read_wav(path) -> TimeSignal:
    rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        data = data.astype(np.float64)
    else:
        raise NonFiniteInput(f"unsupported WAV sample format {data.dtype}")
    return TimeSignal(data, int(rate))


def write_wav(path, signal: TimeSignal):
    if not np.all(np.isfinite(signal.samples)):
        raise NonFiniteInput("refusing to write non-finite samples")
    wavfile.write(path, signal.sample_rate, signal.samples.astype(np.float32))
