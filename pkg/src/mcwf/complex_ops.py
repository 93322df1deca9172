"""Complex tensors as (real, imaginary) pairs, plus the batched Hermitian
linear algebra the Wiener filter and its Gaussian objective need.

Elementwise complex arithmetic and the complex matrix product are built by
composing real tape operations, so their gradients come for free. The
Hermitian inverse and log-determinant are single tape nodes with
hand-written adjoints (d(M^-1) = -M^-1 dM M^-1 and d logdet = tr(M^-1 dM));
both run a shared batched Gaussian elimination with partial pivoting.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .errors import DomainError, ShapeMismatch, SingularMatrix

__all__ = [
    "ComplexTensor",
    "complex_matmul",
    "hermitian_inverse",
    "hermitian_logdet",
]

_PIVOT_FLOOR = 1e-14
_HERMITIAN_TOL = 1e-8


class ComplexTensor:
    """Pair of equally shaped real tensors interpreted as re + i*im."""

    __slots__ = ("re", "im")

    def __init__(self, re, im):
        re, im = as_tensor(re), as_tensor(im)
        if re.shape != im.shape:
            raise ShapeMismatch(f"re/im shapes differ: {re.shape} vs {im.shape}")
        self.re = re
        self.im = im

    @classmethod
    def from_numpy(cls, arr) -> "ComplexTensor":
        arr = np.asarray(arr)
        return cls(Tensor(arr.real.copy()), Tensor(arr.imag.copy()))

    def numpy(self) -> np.ndarray:
        return self.re.data + 1j * self.im.data

    @property
    def shape(self):
        return self.re.shape

    @property
    def ndim(self):
        return self.re.ndim

    def conj(self) -> "ComplexTensor":
        return ComplexTensor(self.re, ad.neg(self.im))

    def transpose_matrix(self) -> "ComplexTensor":
        return ComplexTensor(ad.swap_last_axes(self.re), ad.swap_last_axes(self.im))

    def hermitian(self) -> "ComplexTensor":
        return ComplexTensor(ad.swap_last_axes(self.re), ad.neg(ad.swap_last_axes(self.im)))

    def reshape(self, shape) -> "ComplexTensor":
        return ComplexTensor(ad.reshape(self.re, shape), ad.reshape(self.im, shape))

    def abs2(self) -> Tensor:
        """Elementwise squared magnitude as a real tensor."""
        return ad.add(ad.square(self.re), ad.square(self.im))

    def __add__(self, other):
        return ComplexTensor(ad.add(self.re, other.re), ad.add(self.im, other.im))

    def __sub__(self, other):
        return ComplexTensor(ad.sub(self.re, other.re), ad.sub(self.im, other.im))

    def __mul__(self, other):
        """Elementwise complex product (broadcasting)."""
        if isinstance(other, ComplexTensor):
            return ComplexTensor(
                ad.sub(ad.mul(self.re, other.re), ad.mul(self.im, other.im)),
                ad.add(ad.mul(self.re, other.im), ad.mul(self.im, other.re)),
            )
        return self.scale(other)

    def scale(self, factor) -> "ComplexTensor":
        """Multiply by a real scalar/tensor (broadcasting)."""
        return ComplexTensor(ad.mul(self.re, factor), ad.mul(self.im, factor))


def complex_matmul(a: ComplexTensor, b: ComplexTensor) -> ComplexTensor:
    """Batched complex matrix product from four real matmuls."""
    re = ad.sub(ad.matmul(a.re, b.re), ad.matmul(a.im, b.im))
    im = ad.add(ad.matmul(a.re, b.im), ad.matmul(a.im, b.re))
    return ComplexTensor(re, im)


def _gauss_jordan(a: np.ndarray):
    """Invert a batch of complex matrices by Gauss-Jordan elimination with
    partial pivoting; also returns log|det| from the pivot magnitudes.

    a: (..., K, K) complex128. Raises SingularMatrix on pivot underflow.
    """
    batch_shape = a.shape[:-2]
    k = a.shape[-1]
    m = a.reshape(-1, k, k).astype(np.complex128, copy=True)
    n = m.shape[0]
    aug = np.concatenate([m, np.broadcast_to(np.eye(k), m.shape).astype(np.complex128)], axis=2)
    logdet = np.zeros(n)
    rows = np.arange(n)
    for j in range(k):
        piv_rows = j + np.abs(aug[:, j:, j]).argmax(axis=1)
        swap = piv_rows != j
        if np.any(swap):
            tmp = aug[rows[swap], piv_rows[swap]].copy()
            aug[rows[swap], piv_rows[swap]] = aug[rows[swap], j]
            aug[rows[swap], j] = tmp
        piv = aug[:, j, j].copy()
        piv_mag = np.abs(piv)
        if np.any(piv_mag < _PIVOT_FLOOR):
            raise SingularMatrix(
                f"pivot magnitude below {_PIVOT_FLOOR:g} in column {j} after regularization"
            )
        logdet += np.log(piv_mag)
        aug[:, j, :] /= piv[:, None]
        factor = aug[:, :, j].copy()
        factor[:, j] = 0.0
        aug -= factor[:, :, None] * aug[:, j, None, :]
    inv = aug[:, :, k:].reshape(*batch_shape, k, k)
    return inv, logdet.reshape(batch_shape)


def _prepare_hermitian(m: ComplexTensor, eps: float):
    """Symmetrize and trace-regularize; returns the complex matrix A and K."""
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise ShapeMismatch(f"expected square trailing dims, got {m.shape}")
    if eps < 0:
        raise DomainError("regularization eps must be nonnegative")
    a = m.numpy()
    ah = np.conj(np.swapaxes(a, -1, -2))
    scale = max(1.0, float(np.abs(a).max(initial=0.0)))
    if np.abs(a - ah).max(initial=0.0) > _HERMITIAN_TOL * scale:
        raise DomainError("matrix is not Hermitian within tolerance 1e-8")
    a = 0.5 * (a + ah)
    k = a.shape[-1]
    if eps > 0.0:
        tr = np.real(np.trace(a, axis1=-2, axis2=-1))
        a = a + (eps / k) * tr[..., None, None] * np.eye(k)
    return a, k


def _chain_to_input(g_a: np.ndarray, eps: float, k: int) -> np.ndarray:
    """Adjoint of the symmetrize + trace-regularize preprocessing."""
    if eps > 0.0:
        tr = np.real(np.trace(g_a, axis1=-2, axis2=-1))
        g_a = g_a + (eps / k) * tr[..., None, None] * np.eye(k)
    gh = np.conj(np.swapaxes(g_a, -1, -2))
    return 0.5 * (g_a + gh)


def hermitian_inverse(m: ComplexTensor, eps: float) -> ComplexTensor:
    """Batched inverse of (M + eps*(trace(M)/K)*I) for Hermitian M.

    M must be Hermitian to within 1e-8 (it is symmetrized internally).
    The adjoint is recorded on the tape, so downstream losses differentiate
    through the inversion.
    """
    a, k = _prepare_hermitian(m, eps)
    inv, _ = _gauss_jordan(a)
    inv_h = np.conj(np.swapaxes(inv, -1, -2))

    def grad_for(g_complex):
        g_a = -inv_h @ g_complex @ inv_h
        return _chain_to_input(g_a, eps, k)

    def vjp_re(g):
        gm = grad_for(g.astype(np.complex128))
        return gm.real, gm.imag

    def vjp_im(g):
        gm = grad_for(1j * g)
        return gm.real, gm.imag

    inputs = (m.re, m.im)
    out_re = ad.custom_op("herm_inv_re", inputs, np.ascontiguousarray(inv.real), vjp_re)
    out_im = ad.custom_op("herm_inv_im", inputs, np.ascontiguousarray(inv.imag), vjp_im)
    return ComplexTensor(out_re, out_im)


def hermitian_logdet(m: ComplexTensor, eps: float) -> Tensor:
    """Real log-determinant of (M + eps*(trace(M)/K)*I) for Hermitian PSD M.

    Computed as the summed log pivot magnitudes of the elimination, which
    equals log det for a positive definite matrix.
    """
    a, k = _prepare_hermitian(m, eps)
    inv, logdet = _gauss_jordan(a)
    inv_h = np.conj(np.swapaxes(inv, -1, -2))

    def vjp(g):
        g_a = g[..., None, None] * inv_h
        gm = _chain_to_input(g_a, eps, k)
        return gm.real, gm.imag

    return ad.custom_op("herm_logdet", (m.re, m.im), logdet, vjp)
