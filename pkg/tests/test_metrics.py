"""SDR and cepstrum distortion."""

import numpy as np
import pytest

from conftest import rel_error
from mcwf.errors import LengthMismatch, NoVoicedFrames, ZeroReference
from mcwf.metrics import MetricReport, cepstrum_distortion, sdr


def test_sdr_perfect_and_scaled(rng):
    s = rng.standard_normal(8000)
    assert sdr(s, s) == 100.0
    assert sdr(s, 2.0 * s) == 100.0


def test_sdr_orthogonal_perturbation(rng):
    """e orthogonal to s with ||e||^2 = ||s||^2/100 gives exactly 20 dB."""
    s = rng.standard_normal(8000)
    e = rng.standard_normal(8000)
    e -= (s @ e) / (s @ s) * s  # project out s
    e *= np.sqrt((s @ s) / 100.0) / np.linalg.norm(e)
    assert abs(sdr(s, s + e) - 20.0) < 1e-6


def test_sdr_scale_invariance(rng):
    s = rng.standard_normal(4000)
    y = s + 0.3 * rng.standard_normal(4000)
    base = sdr(s, y)
    for c in (0.1, 3.0, 17.5):
        assert abs(sdr(s, c * y) - base) < 1e-9


def test_sdr_errors(rng):
    with pytest.raises(ZeroReference):
        sdr(np.zeros(100), rng.standard_normal(100))
    with pytest.raises(LengthMismatch):
        sdr(rng.standard_normal(100), rng.standard_normal(99))


def test_cd_identity_and_gain_invariance(rng):
    s = rng.standard_normal(16000)
    assert cepstrum_distortion(s, s) == 0.0
    assert cepstrum_distortion(s, 3.7 * s) < 1e-10


def test_cd_nonnegative_and_symmetric(rng):
    a = rng.standard_normal(12000)
    b = a + 0.5 * rng.standard_normal(12000)
    d1 = cepstrum_distortion(a, b)
    d2 = cepstrum_distortion(b, a)
    assert d1 > 0.0
    # symmetry holds when the same frames are voiced under both references
    assert rel_error(d1, d2) < 1e-9


def test_cd_matches_definition_oracle(rng):
    """Direct per-frame DFT -> log -> IDFT computation."""
    n = 7000
    a = rng.standard_normal(n)
    b = rng.standard_normal(n)
    got = cepstrum_distortion(a, b)

    win, hop, order = 512, 128, 24
    w = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(win) / win)
    frames = 1 + (n - win) // hop
    energies = [float((a[t * hop : t * hop + win] ** 2).sum()) for t in range(frames)]
    mean_e = np.mean(energies)
    dists = []
    for t in range(frames):
        fa = a[t * hop : t * hop + win]
        fb = b[t * hop : t * hop + win]
        if (fa**2).sum() < 1e-8 * mean_e:
            continue
        ca = np.fft.irfft(np.log(np.maximum(np.abs(np.fft.rfft(fa * w)), 1e-10)), n=win)
        cb = np.fft.irfft(np.log(np.maximum(np.abs(np.fft.rfft(fb * w)), 1e-10)), n=win)
        d = ca[1 : order + 1] - cb[1 : order + 1]
        dists.append((10.0 / np.log(10.0)) * np.sqrt(2.0 * (d**2).sum()))
    assert rel_error(got, np.mean(dists)) < 1e-9


def test_cd_no_voiced_frames():
    with pytest.raises(NoVoicedFrames):
        quiet = np.zeros(4000)
        quiet[0] = 1e-9  # nonzero mean energy, every frame below the gate
        cepstrum_distortion(quiet, quiet)


def test_metric_report_roundtrip():
    import json

    rep = MetricReport(labels=["u0", "u1"])
    rep.add("observed", 1.0, 5.0)
    rep.add("observed", 3.0, 4.0)
    rep.add("mwf", 10.0, 3.5)
    doc = json.loads(rep.to_json())
    assert doc["means"]["observed"]["sdr"] == 2.0
    table = rep.table()
    assert "mwf" in table and "observed" in table
    # recomputed means match the table content
    assert f"{doc['means']['mwf']['sdr']:.2f}" in table
