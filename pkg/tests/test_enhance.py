"""SCM estimation, time-varying scaling, MWF, posterior covariance."""

import numpy as np
import pytest

from conftest import central_difference, random_complex, random_hpd, rel_error
from mcwf import autodiff as ad
from mcwf.autodiff import GradientTape, Tensor
from mcwf.complex_ops import ComplexTensor
from mcwf.enhance import (
    MaskPsdSet,
    ScmField,
    apply_mwf,
    estimate_time_invariant_scm,
    posterior_covariance,
    scale_time_varying,
    wiener_filter,
)
from mcwf.errors import NegativePsd, ShapeMismatch, ZeroMaskColumn
from mcwf.stft import Spectrogram, StftConfig


def make_spec(rng, cfg, frames=4, channels=2, scale=1.0):
    data = random_complex(rng, (frames, cfg.num_bins, channels), scale=scale)
    return Spectrogram(ComplexTensor.from_numpy(data), cfg, frames * cfg.hop)


def scm_loop_oracle(x, mask):
    """Explicit weighted-sum SCM per frequency."""
    t, f, k = x.shape
    out = np.zeros((f, k, k), dtype=complex)
    for fi in range(f):
        acc = np.zeros((k, k), dtype=complex)
        for ti in range(t):
            v = x[ti, fi][:, None]
            acc += mask[ti, fi] * (v @ np.conj(v.T))
        out[fi] = acc / mask[:, fi].sum()
    return out


def test_scm_single_frame_unit_mask(tiny_cfg, rng):
    spec = make_spec(rng, tiny_cfg, frames=1)
    scm = estimate_time_invariant_scm(spec, np.ones((1, tiny_cfg.num_bins)))
    x = spec.numpy()[0]
    expect = np.einsum("fk,fl->fkl", x, np.conj(x))
    assert rel_error(scm.numpy(), expect) < 1e-14


def test_scm_uniform_two_frames_is_mean(tiny_cfg, rng):
    spec = make_spec(rng, tiny_cfg, frames=2)
    scm = estimate_time_invariant_scm(spec, np.ones((2, tiny_cfg.num_bins)))
    x = spec.numpy()
    expect = 0.5 * (
        np.einsum("fk,fl->fkl", x[0], np.conj(x[0]))
        + np.einsum("fk,fl->fkl", x[1], np.conj(x[1]))
    )
    assert rel_error(scm.numpy(), expect) < 1e-13


def test_scm_matches_loop_oracle(tiny_cfg, rng):
    spec = make_spec(rng, tiny_cfg, frames=5)
    mask = rng.uniform(0.05, 1.0, size=(5, tiny_cfg.num_bins))
    scm = estimate_time_invariant_scm(spec, mask)
    assert rel_error(scm.numpy(), scm_loop_oracle(spec.numpy(), mask)) < 1e-12


def test_scm_hermitian_psd(tiny_cfg, rng):
    spec = make_spec(rng, tiny_cfg, frames=6)
    mask = rng.uniform(0.0, 1.0, size=(6, tiny_cfg.num_bins)) + 1e-3
    m = estimate_time_invariant_scm(spec, mask).numpy()
    assert np.abs(m - np.conj(np.swapaxes(m, -1, -2))).max() < 1e-12
    assert np.linalg.eigvalsh(m).min() > -1e-10


def test_scm_zero_mask_column(tiny_cfg, rng):
    spec = make_spec(rng, tiny_cfg, frames=3)
    mask = np.ones((3, tiny_cfg.num_bins))
    mask[:, 2] = 0.0
    with pytest.raises(ZeroMaskColumn):
        estimate_time_invariant_scm(spec, mask)
    with pytest.raises(NegativePsd):
        estimate_time_invariant_scm(spec, -mask)


def test_scale_time_varying(tiny_cfg, rng):
    f, k = 5, 2
    scm = ComplexTensor.from_numpy(random_hpd(rng, (f, k, k)))
    ones = np.ones((3, f))
    out = scale_time_varying(scm, ones).numpy()
    for t in range(3):
        np.testing.assert_allclose(out[t], scm.numpy(), atol=1e-15)
    psd = rng.uniform(0.0, 2.0, size=(3, f))
    psd[1, 2] = 0.0
    out = scale_time_varying(scm, psd).numpy()
    assert np.abs(out[1, 2]).max() == 0.0
    for t in range(3):
        for fi in range(f):
            np.testing.assert_allclose(out[t, fi], psd[t, fi] * scm.numpy()[fi], atol=1e-14)
    with pytest.raises(NegativePsd):
        scale_time_varying(scm, -psd - 0.1)


def test_wiener_noiseless_limit():
    eye = np.broadcast_to(np.eye(2), (3, 4, 2, 2)).astype(complex)
    w = wiener_filter(
        ComplexTensor.from_numpy(eye), ComplexTensor.from_numpy(np.zeros_like(eye)), eps=0.0
    )
    assert rel_error(w.numpy(), eye) < 1e-12


def test_wiener_scalar_gain():
    r_s = ComplexTensor.from_numpy(np.full((1, 1, 1, 1), 3.0 + 0j))
    r_n = ComplexTensor.from_numpy(np.full((1, 1, 1, 1), 1.0 + 0j))
    w = wiener_filter(r_s, r_n, eps=0.0)
    np.testing.assert_allclose(w.numpy().ravel(), [0.75], atol=1e-15)


def test_wiener_defining_residual(rng):
    r_s = random_hpd(rng, (4, 6, 2, 2))
    r_n = random_hpd(rng, (4, 6, 2, 2))
    w = wiener_filter(
        ComplexTensor.from_numpy(r_s), ComplexTensor.from_numpy(r_n), eps=0.0
    ).numpy()
    resid = w @ (r_s + r_n) - r_s
    assert np.abs(resid).max() < 1e-9


def test_mask_scaling_invariance(tiny_cfg, rng):
    """Eq-style normalization: c*mask leaves the SCM (and W) unchanged."""
    spec = make_spec(rng, tiny_cfg, frames=5)
    mask = rng.uniform(0.1, 0.9, size=(5, tiny_cfg.num_bins))
    a = estimate_time_invariant_scm(spec, mask).numpy()
    b = estimate_time_invariant_scm(spec, 7.3 * mask).numpy()
    assert rel_error(a, b) < 1e-12


def test_apply_mwf_identity_zero_and_oracle(tiny_cfg, rng):
    spec = make_spec(rng, tiny_cfg, frames=3)
    t, f, k = spec.data.shape
    eye = np.broadcast_to(np.eye(k), (t, f, k, k)).astype(complex)
    out = apply_mwf(ComplexTensor.from_numpy(eye), spec)
    assert rel_error(out.numpy(), spec.numpy()) < 1e-14
    zero = apply_mwf(ComplexTensor.from_numpy(np.zeros_like(eye)), spec)
    assert np.abs(zero.numpy()).max() == 0.0

    w = random_complex(rng, (t, f, k, k))
    got = apply_mwf(ComplexTensor.from_numpy(w), spec).numpy()
    x = spec.numpy()
    for ti in range(t):
        for fi in range(f):
            np.testing.assert_allclose(got[ti, fi], w[ti, fi] @ x[ti, fi], atol=1e-12)


def test_posterior_covariance_limits(rng):
    r_s = random_hpd(rng, (2, 3, 2, 2))
    eye = np.broadcast_to(np.eye(2), r_s.shape).astype(complex)
    psi = posterior_covariance(
        ComplexTensor.from_numpy(eye), ComplexTensor.from_numpy(r_s)
    ).numpy()
    assert np.abs(psi).max() < 1e-12
    psi0 = posterior_covariance(
        ComplexTensor.from_numpy(np.zeros_like(eye)), ComplexTensor.from_numpy(r_s)
    ).numpy()
    assert rel_error(psi0, r_s) < 1e-12


def test_posterior_covariance_scalar_case():
    r_s = ComplexTensor.from_numpy(np.full((1, 1, 1, 1), 3.0 + 0j))
    r_n = ComplexTensor.from_numpy(np.full((1, 1, 1, 1), 1.0 + 0j))
    w = wiener_filter(r_s, r_n, eps=0.0)
    psi = posterior_covariance(w, r_s)
    np.testing.assert_allclose(psi.numpy().ravel(), [0.75], atol=1e-14)


def test_mask_psd_set_validation(tiny_cfg, rng):
    shape = (3, tiny_cfg.num_bins)
    good = MaskPsdSet(
        np.full(shape, 0.5), np.full(shape, 0.5), np.ones(shape), np.ones(shape)
    )
    assert good.mask_s.shape == shape
    with pytest.raises(NegativePsd):
        MaskPsdSet(np.full(shape, 1.5), np.full(shape, 0.5), np.ones(shape), np.ones(shape))
    with pytest.raises(NegativePsd):
        MaskPsdSet(np.full(shape, 0.5), np.full(shape, 0.5), -np.ones(shape), np.ones(shape))
    with pytest.raises(ShapeMismatch):
        MaskPsdSet(np.full(shape, 0.5), np.full(shape, 0.5), np.ones(shape), np.ones((2, 2)))


def test_scm_field_construction_identity(tiny_cfg, rng):
    spec = make_spec(rng, tiny_cfg, frames=4)
    shape = (4, tiny_cfg.num_bins)
    masks = MaskPsdSet(
        rng.uniform(0.2, 0.8, shape),
        rng.uniform(0.2, 0.8, shape),
        rng.uniform(0.5, 2.0, shape),
        rng.uniform(0.5, 2.0, shape),
    )
    field = ScmField.from_masks(spec, masks)
    assert field.check_psd()
    tv = field.speech_tv.numpy()
    inv = field.speech_inv.numpy()
    psd = masks.psd_s.data
    for t in range(4):
        np.testing.assert_array_equal(tv[t], psd[t][:, None, None] * inv)

    fixed = ScmField.from_masks(spec, masks, noise_time_varying=False)
    for t in range(4):
        np.testing.assert_array_equal(fixed.noise_tv.numpy()[t], fixed.noise_inv.numpy())


def test_full_chain_gradient_matches_fd(tiny_cfg, rng):
    """mask/psd -> SCM -> MWF -> applied output, differentiated end to end."""
    frames = 4
    spec = make_spec(rng, tiny_cfg, frames=frames)
    shape = (frames, tiny_cfg.num_bins)
    mask_s0 = rng.uniform(0.2, 0.8, shape)
    mask_n0 = rng.uniform(0.2, 0.8, shape)
    psd_s0 = rng.uniform(0.5, 2.0, shape)
    psd_n0 = rng.uniform(0.5, 2.0, shape)
    target = random_complex(rng, spec.data.shape)

    def pipeline(mask_s, mask_n, psd_s, psd_n):
        r_s = scale_time_varying(estimate_time_invariant_scm(spec, mask_s), psd_s)
        r_n = scale_time_varying(estimate_time_invariant_scm(spec, mask_n), psd_n)
        w = wiener_filter(r_s, r_n, eps=1e-6)
        est = apply_mwf(w, spec)
        resid = est.data - ComplexTensor.from_numpy(target)
        return ad.tensor_sum(resid.abs2())

    tape = GradientTape()
    handles = [tape.watch(a) for a in (mask_s0, mask_n0, psd_s0, psd_n0)]
    grads = tape.backward(pipeline(*handles))

    arrays = [mask_s0, mask_n0, psd_s0, psd_n0]
    for i, handle in enumerate(handles):
        def f(v, i=i):
            args = [a.copy() for a in arrays]
            args[i] = v
            return float(pipeline(*args).data)

        fd = central_difference(f, arrays[i])
        assert rel_error(grads[handle.tape_id], fd) < 1e-4, f"input {i}"
