"""Dense linear algebra, distribution functions and random generation.

All matrices are plain ``numpy.ndarray`` objects in float64.  Decompositions are
delegated to LAPACK through :mod:`numpy.linalg`; the tests check them against a
hand-written Jacobi oracle.

Random numbers come from :func:`make_rng`, which returns a
``numpy.random.Generator`` driven by the Philox 4x64-10 counter-based bit
generator.  Philox output depends only on (key, counter), so a given seed
yields the same stream on every platform.
"""

from dataclasses import dataclass

import numpy as np
from scipy import special

from deepin.errors import ContractViolation, NumericalFailure

__all__ = [
    "SpectralDecomp",
    "make_rng",
    "spawn_seed",
    "derive_seed",
    "svd",
    "sym_eig",
    "sym_inv_sqrt",
    "sym_pinv",
    "chi2_sf",
    "std_normal_sf",
    "std_normal_quantile",
    "finite_diff_grad",
]

_SYM_TOL = 1e-8


@dataclass(frozen=True)
class SpectralDecomp:
    """Eigen-decomposition of a symmetric matrix, eigenvalues descending."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self):
        q = self.eigenvectors
        return (q * self.eigenvalues) @ q.T


def make_rng(seed):
    """Return a Philox-backed generator for ``seed`` (a non-negative int)."""
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ContractViolation(f"seed must fit in 64 unsigned bits, got {seed}")
    return np.random.Generator(np.random.Philox(seed))


def spawn_seed(rng):
    """Draw a fresh 63-bit seed from ``rng`` for a child generator."""
    return int(rng.integers(0, 2**63 - 1))


def derive_seed(seed, *stream):
    """Independent child seed for ``(seed, stream...)`` via ``SeedSequence``."""
    seq = np.random.SeedSequence([int(seed)] + [int(s) for s in stream])
    return int(seq.generate_state(1, np.uint64)[0])


def _require_finite(M, what="matrix"):
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise ContractViolation(f"{what} has non-finite entries")
    return M


def _require_symmetric(M):
    M = _require_finite(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ContractViolation(f"expected a square matrix, got shape {M.shape}")
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if M.size and np.max(np.abs(M - M.T)) > _SYM_TOL * scale:
        raise ContractViolation("matrix is not symmetric")
    return 0.5 * (M + M.T)


def svd(M):
    """Thin singular value decomposition ``M = U @ diag(S) @ V.T``.

    Returns ``(U, S, V)`` with ``S`` non-negative and descending.
    """
    M = _require_finite(M)
    if M.ndim != 2:
        raise ContractViolation(f"svd expects a 2-D matrix, got {M.ndim}-D")
    try:
        U, S, Vt = np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"SVD did not converge: {exc}") from exc
    return U, S, Vt.T


def sym_eig(M):
    """Eigen-decomposition of a symmetric matrix with descending eigenvalues."""
    M = _require_symmetric(M)
    try:
        w, Q = np.linalg.eigh(M)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigendecomposition did not converge: {exc}") from exc
    order = np.argsort(w)[::-1]
    return SpectralDecomp(w[order], Q[:, order])


def _floored_power(M, power, floor, clamp):
    dec = sym_eig(M)
    lam = dec.eigenvalues
    if floor <= 0:
        raise ContractViolation("floor must be positive")
    top = lam[0] if lam.size else 0.0
    if top <= 0:
        return np.zeros_like(M, dtype=float)
    cut = floor * top
    keep = lam > cut
    scaled = np.zeros_like(lam)
    scaled[keep] = lam[keep] ** power
    if clamp:
        scaled[~keep] = cut**power
    q = dec.eigenvectors
    out = (q * scaled) @ q.T
    return 0.5 * (out + out.T)


def sym_inv_sqrt(M, floor=1e-8, clamp=False):
    """Pseudo-inverse square root of a symmetric PSD matrix.

    Eigenvalues at or below ``floor * max(eigenvalue)`` are dropped (mapped to
    zero).  With ``clamp=True`` they are instead raised to the cut-off before
    inverting, which turns a rank-deficient direction into a very heavily
    weighted one rather than an ignored one.
    """
    return _floored_power(M, -0.5, floor, clamp)


def sym_pinv(M, floor=1e-8):
    """Floored pseudo-inverse of a symmetric PSD matrix."""
    return _floored_power(M, -1.0, floor, False)


def chi2_sf(x, k):
    """Survival function ``P(chi2_k >= x)``."""
    if int(k) != k or k < 1:
        raise ContractViolation(f"degrees of freedom must be a positive integer, got {k}")
    x = np.asarray(x, dtype=float)
    out = special.gammaincc(0.5 * k, 0.5 * np.maximum(x, 0.0))
    out = np.where(np.isposinf(x), 0.0, out)
    return float(out) if out.ndim == 0 else out


def std_normal_sf(z):
    """Upper tail of the standard normal distribution."""
    z = np.asarray(z, dtype=float)
    out = special.ndtr(-z)
    return float(out) if out.ndim == 0 else out


def std_normal_quantile(p):
    """Inverse of the standard normal CDF on the open interval (0, 1)."""
    p_arr = np.asarray(p, dtype=float)
    if np.any(~(p_arr > 0) | ~(p_arr < 1)):
        raise ContractViolation("quantile argument must lie strictly inside (0, 1)")
    out = special.ndtri(p_arr)
    return float(out) if out.ndim == 0 else out


def finite_diff_grad(f, x, h=1e-5):
    """Central-difference gradient of a scalar function at ``x``."""
    if h <= 0:
        raise ContractViolation("step h must be positive")
    x = np.array(x, dtype=float)
    flat = x.reshape(-1)
    grad = np.empty(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalFailure(f"non-finite function value at coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x.shape)
