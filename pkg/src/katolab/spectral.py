"""Eigendecomposition of model Laplacians; heat kernels and semigroups.

The generalized symmetric problem A psi = mu M psi (stiffness against the
diagonal volume matrix) is reduced to a dense symmetric problem via
M^{-1/2}; eigenfields come back orthonormal in the volume-weighted inner
product.  Heat kernels are mode sums H(t,x,y) = sum_k e^{-mu_k t}
psi_k(x) psi_k(y), and Schroedinger operators Delta - V reuse the same
machinery with the potential folded into the diagonal.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .geometry import ModelGeometry

TRUNCATION_TOL = 1e-12


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenpairs of a (possibly potential-shifted) model operator.

    ``eigenfields`` has one column per mode, orthonormal under the
    volume weights; eigenvalues are nondecreasing.  ``potential`` is
    None for the plain Laplacian.
    """

    geometry: ModelGeometry
    eigenvalues: np.ndarray
    eigenfields: np.ndarray
    potential: np.ndarray | None = None

    @property
    def mode_count(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def is_full(self) -> bool:
        return self.mode_count == self.geometry.n_nodes

    def coefficients(self, u: np.ndarray) -> np.ndarray:
        """Volume-weighted mode coefficients <u, psi_k>_nu."""
        return self.eigenfields.T @ (self.geometry.volume_weights * u)

    def reconstruct(self, coeffs: np.ndarray) -> np.ndarray:
        return self.eigenfields @ coeffs


def _sign_fix(vecs: np.ndarray) -> np.ndarray:
    # deterministic sign convention: largest-magnitude entry positive
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def decompose(geom: ModelGeometry, m: int | None = None,
              potential: np.ndarray | None = None) -> SpectralDecomposition:
    """Lowest m eigenpairs of Delta (or Delta - potential).

    Dense solve; grids up to a few thousand nodes are fine.  With
    ``m=None`` the full decomposition is returned, which keeps heat
    kernels positive and mass-conserving to rounding.
    """
    n = geom.n_nodes
    if m is None:
        m = n
    if not 1 <= m <= n:
        raise ValueError(f"mode count {m} outside [1, {n}]")
    sq = np.sqrt(geom.volume_weights)
    B = geom.stiffness.toarray() / sq[:, None] / sq[None, :]
    if potential is not None:
        B[np.diag_indices_from(B)] -= potential
    B = 0.5 * (B + B.T)
    if m == n:
        vals, vecs = scipy.linalg.eigh(B)
    else:
        vals, vecs = scipy.linalg.eigh(B, subset_by_index=[0, m - 1])
    # kernel modes come back as O(eps * mu_max) noise; snap them to zero
    # so constants are exactly invariant under the semigroup
    floor = 100.0 * np.finfo(float).eps * float(np.max(np.abs(vals)))
    vals = np.where(np.abs(vals) <= floor, 0.0, vals)
    fields = _sign_fix(vecs / sq[:, None])
    # exact diagonal renormalization in the volume inner product removes
    # the eigensolver's normalization bias on long-time semigroup limits
    norms = np.sqrt(geom.volume_weights @ fields**2)
    fields = fields / norms[None, :]
    pot = None if potential is None else np.asarray(potential, dtype=float)
    return SpectralDecomposition(geom, vals, fields, pot)


def _check_time(dec: SpectralDecomposition, t: float):
    if dec.is_full:
        return
    tail = float(np.exp(-dec.eigenvalues[-1] * t))
    if tail > TRUNCATION_TOL:
        warnings.warn(
            f"truncated kernel at t={t:g}: tail factor {tail:.2e}", stacklevel=3
        )
    if t < 10.0 * dec.geometry.h**2:
        warnings.warn(
            f"t={t:g} below the positivity floor 10 h^2 for truncated kernels",
            stacklevel=3,
        )


def heat_kernel(dec: SpectralDecomposition, t: float, x: int, y: int | None = None):
    """Heat kernel H(t, x, y); with y=None the whole column H(t, x, .).

    Symmetric in (x, y) by construction.  Requires t > 0.
    """
    if t <= 0:
        raise ValueError("heat kernel needs t > 0")
    _check_time(dec, t)
    damped = np.exp(-dec.eigenvalues * t) * dec.eigenfields[x, :]
    if y is None:
        return dec.eigenfields @ damped
    return float(np.dot(dec.eigenfields[y, :], damped))


def apply_semigroup(dec: SpectralDecomposition, t: float, u: np.ndarray) -> np.ndarray:
    """e^{-t Delta} u via the mode sum; at t=0 the mode-span projection."""
    if t < 0:
        raise ValueError("semigroup time must be nonnegative")
    if t > 0:
        _check_time(dec, t)
    coeffs = dec.coefficients(u)
    return dec.reconstruct(np.exp(-dec.eigenvalues * t) * coeffs)


def schrodinger_decompose(geom: ModelGeometry, V: np.ndarray,
                          m: int | None = None) -> SpectralDecomposition:
    """Eigenpairs of the Schroedinger operator Delta - V."""
    return decompose(geom, m, potential=np.asarray(V, dtype=float))
