"""Hypothesis tests on a fitted model: a chi-square test per covariate and a
cross-fitted normal test for dropping representation rows."""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from deepin.errors import ContractViolation, NumericalFailure
from deepin.model import Task, loss
from deepin.network import RepuNetwork
from deepin.numerics import (
    chi2_sf,
    make_rng,
    std_normal_sf,
    sym_eig,
    sym_inv_sqrt,
    sym_pinv,
)
from deepin.trainer import (
    TrainOptions,
    fit_least_squares,
    normalize_model,
    split_indices,
    train,
)

__all__ = [
    "ConditionalMean",
    "SandwichParts",
    "CovariateResult",
    "CovariateTestReport",
    "RepresentationTestReport",
    "fit_conditional_mean",
    "sandwich",
    "covariate_test",
    "restrict_model",
    "representation_test",
]

PINV_FLOOR = 1e-8
# Loss-derivative scales below this fraction of the response scale count as zero.
DEGENERATE_REL = 1e-10
NUISANCE_OPTIONS = TrainOptions(epochs=200, batch_size=128, lr=0.01, grad_clip=None,
                                truncate=False)


@dataclass(eq=False)
class ConditionalMean:
    """Fitted map ``z -> E[x | z]`` with input and output standardisation."""

    net: RepuNetwork
    z_mean: np.ndarray
    z_scale: np.ndarray
    x_mean: np.ndarray
    x_scale: np.ndarray

    def __call__(self, Z):
        Z = np.asarray(Z, dtype=float)
        single = Z.ndim == 1
        Zs = (np.atleast_2d(Z) - self.z_mean) / self.z_scale
        out = self.net(Zs) * self.x_scale + self.x_mean
        return out[0] if single else out


def _standardize(A):
    mean = A.mean(axis=0)
    scale = A.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    return mean, scale


def fit_conditional_mean(X, Z, opts=None, hidden=None, seed=0):
    """Least-squares RePU regression of the columns of ``X`` on ``Z``.

    Args:
        X: ``(n, s)`` responses (the active covariates).
        Z: ``(n, k)`` regressors (the active representations).
        opts: optimiser settings; 200 epochs of momentum SGD by default.
        hidden: hidden width, ``4 * k`` by default.
        seed: initialisation seed.
    """
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if X.ndim != 2 or Z.ndim != 2 or X.shape[0] != Z.shape[0]:
        raise ContractViolation("X and Z must be matrices with the same number of rows")
    n, k = Z.shape
    if n < 10 * k:
        raise ContractViolation(f"need at least {10 * k} rows for {k} representations, got {n}")
    opts = opts or NUISANCE_OPTIONS.replace(seed=seed)
    z_mean, z_scale = _standardize(Z)
    x_mean, x_scale = _standardize(X)
    width = hidden or 4 * k
    net = RepuNetwork.initialize((k, width, X.shape[1]), make_rng(seed))
    net = fit_least_squares(net, (Z - z_mean) / z_scale, (X - x_mean) / x_scale, opts)
    return ConditionalMean(net, z_mean, z_scale, x_mean, x_scale)


@dataclass
class SandwichParts:
    """Ingredients of the covariate test.

    ``V3`` is normalised by ``sigma1_sq`` so that ``sigma1_sq * V3`` is the
    sandwich covariance of ``vec(B)`` over the active block.
    """

    V1: np.ndarray
    V2: np.ndarray
    V3: np.ndarray
    J: np.ndarray
    sigma1_sq: float
    rows: np.ndarray
    cols: np.ndarray
    n: int
    degenerate: bool = False
    diagnostics: list = field(default_factory=list)


def _negligible(scale, y):
    return scale <= DEGENERATE_REL * max(1.0, float(np.sqrt(np.mean(y * y))))


def _active(model):
    rows = np.flatnonzero(model.row_mask & (np.linalg.norm(model.B, axis=1) > 0))
    cols = np.flatnonzero(model.col_mask & (np.linalg.norm(model.B, axis=0) > 0))
    return rows, cols


def _check_normalized(model, rows):
    B = model.B[rows]
    norms = np.linalg.norm(B, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-8):
        raise ContractViolation("model must be normalised (unit active rows) before inference")
    for b in B:
        nz = np.flatnonzero(b)
        if nz.size and b[nz[0]] < 0:
            raise ContractViolation("model must be normalised (positive leading entries)")


def sandwich(model, X, y, h):
    """Score, curvature and variance matrices for the active block of ``B``.

    ``h`` maps active representations to the conditional mean of the active
    covariates.  Residuals ``x - h(z)`` are projected off the row space of
    the active block, where the population residual vanishes exactly.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    rows, cols = _active(model)
    if rows.size == 0 or cols.size == 0:
        raise ContractViolation("model has no active representation")
    _check_normalized(model, rows)
    n = X.shape[0]
    Z = model.represent(X)
    out, tape = model.net.forward(Z)
    u = out[:, 0]
    lt = loss(model.task, u, y)
    _, grad_z = model.net.backward(tape, np.ones(n))
    dg = grad_z[:, rows]
    Bb = model.B[np.ix_(rows, cols)]
    r = X[:, cols] - h(Z[:, rows])
    Q, _ = np.linalg.qr(Bb.T)
    r = r - (r @ Q) @ Q.T
    k, s = rows.size, cols.size
    psi = (dg[:, :, None] * r[:, None, :]).reshape(n, k * s)
    V1 = (psi * lt.d2[:, None]).T @ psi / n
    V2 = (psi * (lt.d1**2)[:, None]).T @ psi / n
    V1 = 0.5 * (V1 + V1.T)
    V2 = 0.5 * (V2 + V2.T)
    sigma1_sq = float(np.mean(lt.d1**2))
    J = np.zeros((k * s, k * s))
    for i in range(k):
        b = Bb[i]
        J[i * s:(i + 1) * s, i * s:(i + 1) * s] = np.eye(s) - np.outer(b, b)
    diagnostics = []
    degenerate = False
    if _negligible(math.sqrt(sigma1_sq), y) or not np.any(V2):
        degenerate = True
        diagnostics.append("score variance is zero (perfect fit)")
        V3 = np.zeros_like(V1)
    else:
        eig = sym_eig(V1).eigenvalues
        top = eig[0] if eig.size else 0.0
        if top <= 0:
            degenerate = True
            diagnostics.append("curvature matrix is zero")
        elif np.sum(eig > PINV_FLOOR * top) < J.shape[0] - k:
            diagnostics.append(
                "curvature matrix singular beyond the tangent directions; pseudo-inverse used"
            )
        P = sym_pinv(V1, PINV_FLOOR)
        V3 = J.T @ P @ V2 @ P @ J / sigma1_sq
        V3 = 0.5 * (V3 + V3.T)
    return SandwichParts(V1, V2, V3, J, sigma1_sq, rows, cols, n, degenerate, diagnostics)


class CovariateResult(dict):
    """One row of a covariate report: ``variable``, ``U``, ``statistic``, ``df``, ``p_value``."""


@dataclass
class CovariateTestReport:
    results: list
    df: int
    degenerate: bool = False
    diagnostics: list = field(default_factory=list)

    def p_values(self):
        return {r["variable"]: r["p_value"] for r in self.results}

    def to_dict(self):
        return {
            "df": self.df,
            "degenerate": self.degenerate,
            "diagnostics": list(self.diagnostics),
            "results": [
                {**r, "U": [float(v) for v in r["U"]] if r["U"] is not None else None}
                for r in self.results
            ],
        }


def covariate_test(model, X, y, h=None, parts=None, seed=0):
    """Chi-square test of ``H0: column j of B is zero`` for each active column.

    For column ``j`` the statistic is ``||U_j||^2`` with
    ``U_j = sqrt(n) / sigma1 * W_j^{-1/2} B[:, j]`` where ``W_j`` is the block of
    ``V3`` on the entries of column ``j`` (row-major vectorisation) and the
    inverse root is floored relative to the largest eigenvalue of ``V3``.
    The reference distribution is chi-square with one degree of freedom per
    active row.  Inactive columns are reported with ``p_value = 1``.

    Args:
        h: fitted conditional mean; estimated with :func:`fit_conditional_mean`
            when omitted.
        parts: precomputed :class:`SandwichParts`.
    """
    X = np.asarray(X, dtype=float)
    rows, cols = _active(model)
    if parts is None:
        if h is None:
            Z = model.represent(X)[:, rows]
            h = fit_conditional_mean(X[:, cols], Z, seed=seed)
        parts = sandwich(model, X, y, h)
    k, s = parts.rows.size, parts.cols.size
    results = []
    if parts.degenerate:
        for j in range(model.n_features):
            results.append(CovariateResult(variable=j, U=None, statistic=None, df=k,
                                           p_value=None))
        return CovariateTestReport(results, k, True, list(parts.diagnostics))
    top = sym_eig(parts.V3).eigenvalues[0]
    sigma = math.sqrt(parts.sigma1_sq)
    Bb = model.B[np.ix_(parts.rows, parts.cols)]
    col_pos = {int(c): i for i, c in enumerate(parts.cols)}
    for j in range(model.n_features):
        if j not in col_pos:
            results.append(CovariateResult(variable=j, U=np.zeros(k), statistic=0.0, df=k,
                                           p_value=1.0))
            continue
        jj = col_pos[j]
        idx = np.arange(k) * s + jj
        block = parts.V3[np.ix_(idx, idx)]
        root = _inv_sqrt_global(block, top)
        U = math.sqrt(parts.n) / sigma * root @ Bb[:, jj]
        stat = float(U @ U)
        results.append(CovariateResult(variable=j, U=U, statistic=stat, df=k,
                                       p_value=float(chi2_sf(stat, k))))
    return CovariateTestReport(results, k, False, list(parts.diagnostics))


def _inv_sqrt_global(block, top):
    """Inverse square root with eigenvalues clamped at ``PINV_FLOOR * top``."""
    if top <= 0:
        return np.zeros_like(block)
    lam, Q = np.linalg.eigh(0.5 * (block + block.T))
    lam = np.maximum(lam, PINV_FLOOR * top)
    return (Q / np.sqrt(lam)) @ Q.T


@dataclass
class RepresentationTestReport:
    index_set: tuple
    T: float
    sigma2: float
    z: Optional[float]
    p_value: Optional[float]
    halves: tuple
    degenerate: bool = False
    diagnostics: list = field(default_factory=list)

    def to_dict(self):
        return {
            "index_set": [int(i) for i in self.index_set],
            "T": self.T,
            "sigma2": self.sigma2,
            "z": self.z,
            "p_value": self.p_value,
            "halves": [int(h) for h in self.halves],
            "degenerate": self.degenerate,
            "diagnostics": list(self.diagnostics),
        }


def restrict_model(model, index_set):
    """Copy of ``model`` whose rows outside ``index_set`` are masked to zero,
    together with the first-layer weights reading them."""
    keep = np.zeros(model.B.shape[0], dtype=bool)
    idx = np.asarray(sorted(set(int(i) for i in index_set)), dtype=int)
    if idx.size and (idx.min() < 0 or idx.max() >= keep.size):
        raise ContractViolation(f"index set {list(idx)} out of range for {keep.size} rows")
    keep[idx] = True
    out = model.copy()
    out.row_mask &= keep
    w_sl, _ = out.net.slices[0]
    W0 = out.net.layers[0][0]
    first = out.theta_mask[w_sl].reshape(W0.shape)
    first[:, ~keep] = False
    out.theta_mask[w_sl] = first.reshape(-1)
    out.apply_masks()
    return out


def _fit_pair(model_factory, index_set, X, y, lam, opts):
    full, _ = train(model_factory(), X, y, lam, opts)
    restricted, _ = train(restrict_model(model_factory(), index_set), X, y, lam, opts)
    return (normalize_model(full, reorder=False), normalize_model(restricted, reorder=False))


def representation_test(X, y, index_set, model_factory, lam, opts=None, split=0.5, seed=0,
                        combine="sum"):
    """Cross-fitted test of ``H0: g(z) depends on z only through z_I``.

    The data are split in two.  On each half an unrestricted model and a
    restricted model (rows outside ``index_set`` masked to zero) are trained
    from the same initialisation.  With ``(f_j, B_j)`` the unrestricted and
    ``(r_j, C_j)`` the restricted fit of half ``j`` and ``k`` the other half,

        u_j = L''(r_j(C_j x), y) * ([f_k(C_j x) - r_j(C_j x)]
                                   + [r_j(B_k x) - r_j(C_j x)])

    and ``T = sqrt(n) * sum_j (n_j / n) * mean_{S_j} u_j``.  The variance
    estimate is ``sigma2^2 = sum_j mean_{S_j} L'(r_j(C_j x), y)^2 / 2`` and
    ``z = T / sigma2`` is referred to the standard normal (two-sided).

    Args:
        index_set: zero-based rows of ``B`` kept under the null.
        model_factory: zero-argument callable returning a fresh untrained
            model; called four times.
        lam: :class:`~deepin.model.PenaltyConfig` used for all four fits.
        split: fraction of rows in the first half.
        combine: ``"sum"`` (default) adds both cross-fitted halves as above.
            ``"first"`` keeps only the ``j = 1`` term, ``T = sqrt(n) * (n_1 / n)
            * mean_{S_1} u_1``.  Under least squares the in-sample restricted
            fit has zero mean residual, so the leading noise terms of the two
            halves cancel in the sum and ``z`` concentrates below unit spread;
            the single-half form keeps them.  It is a diagnostic variant.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if not 0.0 < split < 1.0:
        raise ContractViolation("split fraction must lie in (0, 1)")
    if combine not in ("sum", "first"):
        raise ContractViolation(f"combine must be 'sum' or 'first', got {combine!r}")
    n = X.shape[0]
    index_set = tuple(sorted(set(int(i) for i in index_set)))
    second, first = split_indices(n, split, seed)
    halves = (first, second)
    opts = opts or TrainOptions()
    fits = [_fit_pair(model_factory, index_set, X[h], y[h], lam, opts) for h in halves]
    T = 0.0
    var = 0.0
    for j, k in ((0, 1), (1, 0)):
        Xj, yj = X[halves[j]], y[halves[j]]
        full_k = fits[k][0]
        restr_j = fits[j][1]
        Zr = Xj @ restr_j.B.T
        base = restr_j.net(Zr)[:, 0]
        lt = loss(restr_j.task, base, yj)
        cross = full_k.net(Zr)[:, 0] - base
        swap = restr_j.net(Xj @ full_k.B.T)[:, 0] - base
        u = lt.d2 * (cross + swap)
        if not np.all(np.isfinite(u)):
            raise NumericalFailure("non-finite cross-fitted statistic")
        if combine == "sum" or j == 0:
            T += (Xj.shape[0] / n) * float(u.mean())
        var += float(np.mean(lt.d1**2)) / 2.0
    T *= math.sqrt(n)
    sigma2 = math.sqrt(var)
    sizes = (first.size, second.size)
    if _negligible(sigma2, y):
        return RepresentationTestReport(index_set, T, 0.0, None, None, sizes, True,
                                        ["variance estimate is zero"])
    z = T / sigma2
    p = min(1.0, 2.0 * std_normal_sf(abs(z)))
    return RepresentationTestReport(index_set, T, sigma2, z, p, sizes)
