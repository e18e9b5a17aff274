"""Mini-batch subgradient training with periodic truncation, tuning and
normalisation of the representation matrix."""

import math
from dataclasses import dataclass, field, asdict
from typing import NamedTuple, Optional

import numpy as np

from deepin.errors import ContractViolation, NumericalFailure, TrainingDiverged, TuningFailed
from deepin.model import (
    DeepInModel,
    PenaltyConfig,
    Task,
    data_term,
    penalty,
    penalty_subgrad,
)
from deepin.network import RepuNetwork
from deepin.numerics import make_rng, svd

__all__ = [
    "PenaltyConfig",
    "TrainOptions",
    "EpochRecord",
    "TrainHistory",
    "StructureTriplet",
    "NormalizedB",
    "active_structure",
    "default_thresholds",
    "screen_groups",
    "truncate",
    "train",
    "tune",
    "normalize",
    "normalize_model",
    "fit_least_squares",
    "validation_score",
]

DIVERGENCE_LIMIT = 1e10
_TIE_TOL = 1e-9


@dataclass
class TrainOptions:
    """Optimiser settings.

    The learning rate is multiplied by ``decay_factor`` every ``decay_every``
    epochs (default ``ceil(epochs / 4)``).  Truncation runs at the end of
    epoch ``warmup_epochs`` and then every ``truncation_period`` epochs, plus
    once more after the last epoch.

    At the final truncation, rows and then columns of ``B`` are also zeroed one
    at a time, smallest first, whenever that does not increase the penalised
    full-data objective (``final_screen``).  Relative thresholds alone cannot
    remove every group when all of them are uniformly small.
    """

    epochs: int = 100
    batch_size: int = 64
    lr: float = 0.01
    momentum: float = 0.9
    decay_factor: float = 0.5
    decay_every: Optional[int] = None
    truncation_period: int = 5
    warmup_epochs: int = 10
    seed: int = 0
    validation_fraction: float = 0.2
    row_tau_rel: float = 0.02
    theta_tau_rel: float = 0.001
    tau_statistic: str = "max"
    truncate: bool = True
    grad_clip: Optional[float] = 1.0
    final_screen: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ContractViolation("batch_size must be at least 1")
        if self.truncation_period < 1:
            raise ContractViolation("truncation_period must be at least 1")
        if self.epochs < 0 or self.warmup_epochs < 0:
            raise ContractViolation("epoch counts must be non-negative")
        if self.tau_statistic not in ("max", "mean"):
            raise ContractViolation("tau_statistic must be 'max' or 'mean'")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ContractViolation("validation_fraction must lie in (0, 1)")

    def replace(self, **changes):
        values = asdict(self)
        values.update(changes)
        return TrainOptions(**values)

    def lr_at(self, epoch):
        every = self.decay_every or max(1, math.ceil(self.epochs / 4))
        return self.lr * self.decay_factor ** (epoch // every)


class StructureTriplet(NamedTuple):
    dims: int
    n_vars: int
    nnz: int


class EpochRecord(NamedTuple):
    epoch: int
    objective: float
    loss: float
    rho1: float
    rho2: float
    rho31: float
    l1: float
    dims: int
    n_vars: int
    nnz: int


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    initial_objective: float = float("nan")

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def objectives(self):
        return np.array([r.objective for r in self.records])


def active_structure(model):
    """Counts of nonzero rows and columns of ``B`` and nonzero network weights."""
    B = model.B
    return StructureTriplet(
        dims=int(np.count_nonzero(np.linalg.norm(B, axis=1))),
        n_vars=int(np.count_nonzero(np.linalg.norm(B, axis=0))),
        nnz=int(np.count_nonzero(model.net.theta)),
    )


def default_thresholds(model, lam, opts=None):
    """Thresholds for a truncation event.

    Explicit values in ``lam`` win.  Otherwise the row and column thresholds
    are ``row_tau_rel`` times the largest (``tau_statistic="max"``) or the
    mean l2 norm of the active rows of ``B``, and the weight threshold is
    ``theta_tau_rel`` times the mean absolute active weight.
    """
    opts = opts or TrainOptions()
    B = model.B
    norms = np.linalg.norm(B, axis=1)
    active = norms[model.row_mask & (norms > 0)]
    if active.size == 0:
        row_scale = 0.0
    elif opts.tau_statistic == "max":
        row_scale = float(active.max())
    else:
        row_scale = float(active.mean())
    theta = model.net.theta[model.theta_mask]
    theta_scale = float(np.abs(theta).mean()) if theta.size else 0.0
    tau1 = lam.tau1 if lam.tau1 is not None else opts.row_tau_rel * row_scale
    tau2 = lam.tau2 if lam.tau2 is not None else opts.row_tau_rel * row_scale
    tau3 = lam.tau3 if lam.tau3 is not None else opts.theta_tau_rel * theta_scale
    return tau1, tau2, tau3


def screen_groups(model, X, y, lam):
    """Zero rows, then columns, of ``B`` whose removal does not increase the
    penalised objective on ``(X, y)``; modifies ``model`` in place."""
    def objective():
        value, _, _ = data_term(model, X, y)
        return value + penalty(model, lam).total

    B = model.B
    current = objective()
    for axis, weight in ((1, lam.lam1), (0, lam.lam2)):
        if weight <= 0:
            continue
        norms = np.linalg.norm(B, axis=axis)
        for i in np.argsort(norms, kind="stable"):
            if norms[i] == 0:
                continue
            saved = B[i, :].copy() if axis == 1 else B[:, i].copy()
            if axis == 1:
                B[i, :] = 0.0
            else:
                B[:, i] = 0.0
            trial = objective()
            if trial <= current:
                current = trial
            elif axis == 1:
                B[i, :] = saved
            else:
                B[:, i] = saved
    return model


def _truncate_inplace(model, tau1, tau2, tau3, truncate_B=True):
    if min(tau1, tau2, tau3) < 0:
        raise ContractViolation("truncation thresholds must be non-negative")
    B = model.B
    if truncate_B:
        # Row and column passes alternate until neither changes anything, so
        # the result is a fixed point and the operation is idempotent.
        while True:
            rows = np.linalg.norm(B, axis=1) <= tau1
            dead_rows = rows & model.row_mask
            if dead_rows.any():
                model.row_mask &= ~rows
                B[rows, :] = 0.0
            cols = np.linalg.norm(B, axis=0) <= tau2
            dead_cols = cols & model.col_mask
            if dead_cols.any():
                model.col_mask &= ~cols
                B[:, cols] = 0.0
            if not (dead_rows.any() or dead_cols.any()):
                break
        model.row_mask &= np.linalg.norm(B, axis=1) > 0
        model.col_mask &= np.linalg.norm(B, axis=0) > 0
    net = model.net
    # Weights reading a dead representation coordinate multiply an exact zero.
    w_sl, _ = net.slices[0]
    first = model.theta_mask[w_sl].reshape(net.layers[0][0].shape)
    first[:, ~model.row_mask] = False
    model.theta_mask[w_sl] = first.reshape(-1)
    model.theta_mask &= np.abs(net.theta) > tau3
    model.apply_masks()
    return model


def truncate(model, tau1, tau2, tau3):
    """Hard-threshold rows/columns of ``B`` and individual network weights.

    Rows with l2 norm ``<= tau1`` are zeroed, then columns of the updated
    matrix with norm ``<= tau2``; the two passes repeat until stable.  Weights
    with ``|theta_k| <= tau3`` are zeroed, as are first-layer weights that read
    a zeroed row.  Zeroed entries are masked so training keeps them at zero.
    Returns a new model.
    """
    return _truncate_inplace(model.copy(), tau1, tau2, tau3, truncate_B=not model.frozen_B)


def _record(model, lam, epoch, X, y):
    value, _, _ = data_term(model, X, y)
    parts = penalty(model, lam)
    st = active_structure(model)
    return EpochRecord(
        epoch, value + parts.total, value, parts.rho1, parts.rho2, parts.rho31, parts.l1,
        st.dims, st.n_vars, st.nnz,
    )


def _check_data(model, X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ContractViolation("training data must be a non-empty matrix")
    if y.shape != (X.shape[0],):
        raise ContractViolation("response length does not match the number of rows")
    if X.shape[1] != model.n_features:
        raise ContractViolation(
            f"data has {X.shape[1]} features, model expects {model.n_features}"
        )
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ContractViolation("training data contains non-finite values")
    return X, y


def train(model, X, y, lam, opts=None):
    """Fit ``model`` by mini-batch subgradient descent with truncation.

    Works on a copy; returns ``(fitted_model, history)``.  Masked rows,
    columns and weights receive no updates.  With a fixed seed the run is
    bit-reproducible.
    """
    opts = opts or TrainOptions()
    X, y = _check_data(model, X, y)
    model = model.copy()
    history = TrainHistory()
    if opts.epochs == 0:
        return model, history
    rng = make_rng(opts.seed)
    n = X.shape[0]
    net = model.net
    vel_B = np.zeros_like(model.B)
    vel_t = np.zeros_like(net.theta)
    history.initial_objective = _record(model, lam, 0, X, y).objective
    truncate_at = set(range(opts.warmup_epochs, opts.epochs + 1, opts.truncation_period))
    truncate_at.add(opts.epochs)
    truncate_at.discard(0)
    for epoch in range(opts.epochs):
        lr = opts.lr_at(epoch)
        perm = rng.permutation(n)
        try:
            for start in range(0, n, opts.batch_size):
                idx = perm[start:start + opts.batch_size]
                _, gB, gt = data_term(model, X[idx], y[idx])
                pB, pt = penalty_subgrad(model, lam)
                gB += pB
                gt += pt
                if opts.grad_clip is not None:
                    scale = math.sqrt(float((gB * gB).sum() + (gt * gt).sum()))
                    if scale > opts.grad_clip:
                        gB *= opts.grad_clip / scale
                        gt *= opts.grad_clip / scale
                gt[~model.theta_mask] = 0.0
                vel_t *= opts.momentum
                vel_t -= lr * gt
                net.theta += vel_t
                net.touch()
                if not model.frozen_B:
                    gB[~model.row_mask, :] = 0.0
                    gB[:, ~model.col_mask] = 0.0
                    vel_B *= opts.momentum
                    vel_B -= lr * gB
                    model.B += vel_B
        except NumericalFailure as exc:
            raise TrainingDiverged(f"epoch {epoch + 1}: {exc}", history) from exc
        if opts.truncate and (epoch + 1) in truncate_at:
            taus = default_thresholds(model, lam, opts)
            final = epoch + 1 == opts.epochs
            if final and opts.final_screen and not model.frozen_B:
                try:
                    screen_groups(model, X, y, lam)
                except NumericalFailure as exc:
                    raise TrainingDiverged(f"epoch {epoch + 1}: {exc}", history) from exc
            _truncate_inplace(model, *taus, truncate_B=not model.frozen_B)
            vel_B[~model.row_mask, :] = 0.0
            vel_B[:, ~model.col_mask] = 0.0
            vel_t[~model.theta_mask] = 0.0
        try:
            rec = _record(model, lam, epoch + 1, X, y)
        except NumericalFailure as exc:
            raise TrainingDiverged(f"epoch {epoch + 1}: {exc}", history) from exc
        if not math.isfinite(rec.objective) or rec.objective > DIVERGENCE_LIMIT:
            raise TrainingDiverged(
                f"objective {rec.objective:g} at epoch {epoch + 1}", history
            )
        history.records.append(rec)
    return model, history


def validation_score(model, X, y):
    """Validation MSE for regression (lower is better) or accuracy for
    classification (higher is better)."""
    if model.task is Task.REGRESSION:
        return float(np.mean((model.predict(X) - y) ** 2))
    return float(np.mean(model.predict_label(X) == y))


def split_indices(n, fraction, seed):
    """Seeded train/validation split; returns ``(train_idx, val_idx)``."""
    perm = make_rng(seed).permutation(n)
    n_val = max(1, int(round(fraction * n)))
    if n_val >= n:
        raise ContractViolation("not enough rows for a validation split")
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


@dataclass
class TuneResult:
    config: PenaltyConfig
    cells: list


def tune(X, y, grids, model_factory, opts=None, base=None):
    """Sequential grid search over ``lam1``, ``lam2``, ``lam3`` then ``lam4``.

    Each pass trains one model per candidate with the other weights at their
    already-chosen values (zero for those not yet tuned) and keeps the winner
    on a seeded hold-out split: lowest MSE for regression, highest accuracy
    for classification, ties going to the larger weight.

    Args:
        grids: mapping from ``"lam1"``..``"lam4"`` to candidate values.
        model_factory: zero-argument callable returning a fresh model.
        base: penalty config supplying thresholds; weights are overwritten.

    Returns:
        :class:`TuneResult` with the chosen config and a list of
        ``(name, value, score)`` cells (score ``None`` for diverged runs).
    """
    opts = opts or TrainOptions()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    names = ("lam1", "lam2", "lam3", "lam4")
    for name in names:
        values = grids.get(name, [0.0])
        if len(values) == 0:
            raise ContractViolation(f"grid for {name} is empty")
    base = base or PenaltyConfig()
    chosen = base.replace(lam1=0.0, lam2=0.0, lam3=0.0, lam4=0.0)
    tr, va = split_indices(len(y), opts.validation_fraction, opts.seed)
    cells = []
    for name in names:
        values = sorted(float(v) for v in grids.get(name, [0.0]))
        best = None
        failed = []
        for v in values:
            cfg = chosen.replace(**{name: v})
            model = model_factory()
            try:
                fitted, _ = train(model, X[tr], y[tr], cfg, opts)
                score = validation_score(fitted, X[va], y[va])
            except TrainingDiverged:
                failed.append((name, v))
                cells.append((name, v, None))
                continue
            cells.append((name, v, score))
            if model.task is Task.REGRESSION:
                better = best is None or score <= best[1]
            else:
                better = best is None or score >= best[1]
            if better:
                best = (v, score)
        if best is None:
            raise TuningFailed(f"every candidate for {name} diverged", failed)
        chosen = chosen.replace(**{name: best[0]})
    return TuneResult(chosen, cells)


class NormalizedB(NamedTuple):
    B: np.ndarray
    row_scales: np.ndarray
    sign_flips: np.ndarray
    order: np.ndarray


def _first_nonzero_sign(row):
    nz = np.flatnonzero(row)
    return 1.0 if nz.size == 0 or row[nz[0]] > 0 else -1.0


def normalize(B, active=None, reorder=True):
    """Unit-norm, sign-fixed, ordered version of the active rows of ``B``.

    Each active row is divided by its l2 norm and multiplied by the sign of
    its first nonzero entry.  Active rows are then ordered greedily so that
    row ``k`` is the remaining row most aligned with the ``k``-th right
    singular vector of the normalised matrix, near-ties going to the
    lexicographically largest row; inactive (zero) rows follow.

    With ``reorder=False`` the row order is kept, which is what callers need
    when row indices carry meaning across separately fitted models.

    Returns ``(B_tilde, row_scales, sign_flips, order)`` with
    ``B_tilde[i] = sign_flips[i] * B[order[i]] / row_scales[i]``; inactive
    rows have scale 1 and flip +1.
    """
    B = np.asarray(B, dtype=float)
    if B.ndim != 2:
        raise ContractViolation("B must be a matrix")
    rows = B.shape[0]
    active = np.ones(rows, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    norms = np.linalg.norm(B, axis=1)
    if np.any(active & (norms == 0)):
        raise ContractViolation("an active row of B is zero")
    act = np.flatnonzero(active)
    scales = np.ones(rows)
    flips = np.ones(rows)
    unit = B.copy()
    for i in act:
        s = _first_nonzero_sign(B[i])
        scales[i] = norms[i]
        flips[i] = s
        unit[i] = s * B[i] / norms[i]
    if not reorder:
        return NormalizedB(unit, scales, flips, np.arange(rows))
    ordered = []
    if act.size:
        _, _, V = svd(unit[act])
        remaining = list(act)
        for k in range(act.size):
            v = V[:, k] if k < V.shape[1] else np.zeros(B.shape[1])
            scores = np.array([abs(float(unit[i] @ v)) for i in remaining])
            # Near-ties (always present for two rows) go to the lexicographically
            # largest row, so the order depends on row content, not position.
            tied = [i for i, sc in zip(remaining, scores) if sc >= scores.max() - _TIE_TOL]
            pick = max(tied, key=lambda i: tuple(np.round(unit[i], 9)))
            ordered.append(pick)
            remaining.remove(pick)
    order = np.array(ordered + [i for i in range(rows) if not active[i]], dtype=int)
    return NormalizedB(unit[order], scales[order], flips[order], order)


def normalize_model(model, reorder=True):
    """Normalise ``B`` and fold the row scaling, signs and order into the first
    network layer so the fitted function is unchanged."""
    model = model.copy()
    active = model.row_mask & (np.linalg.norm(model.B, axis=1) > 0)
    res = normalize(model.B, active, reorder)
    net = model.net
    W0, _ = net.layers[0]
    w_sl, _ = net.slices[0]
    factor = res.row_scales * res.sign_flips
    W0[:] = W0[:, res.order] * factor
    mask0 = model.theta_mask[w_sl].reshape(W0.shape)[:, res.order]
    model.theta_mask[w_sl] = mask0.reshape(-1)
    model.B = res.B
    model.row_mask = active[res.order]
    net.touch()
    return model


def fit_least_squares(net, Z, Y, opts=None):
    """Plain multi-output least-squares fit of ``net`` (no penalties).

    Used for nuisance regressions.  Returns the trained copy.
    """
    opts = opts or TrainOptions()
    net = net.copy()
    Z = np.asarray(Z, dtype=float)
    Y = np.asarray(Y, dtype=float).reshape(Z.shape[0], -1)
    rng = make_rng(opts.seed)
    n = Z.shape[0]
    vel = np.zeros_like(net.theta)
    for epoch in range(opts.epochs):
        lr = opts.lr_at(epoch)
        perm = rng.permutation(n)
        for start in range(0, n, opts.batch_size):
            idx = perm[start:start + opts.batch_size]
            out, tape = net.forward(Z[idx])
            resid = out - Y[idx]
            g, _ = net.backward(tape, 2.0 * resid / idx.size)
            if not np.all(np.isfinite(g)):
                raise TrainingDiverged(f"nuisance fit diverged at epoch {epoch + 1}")
            vel *= opts.momentum
            vel -= lr * g
            net.theta += vel
            net.touch()
    return net
