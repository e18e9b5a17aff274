"""The DeepIn model ``y ~ g_theta(B x)``: prediction, losses and penalties."""

from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import expit

from deepin.errors import ContractViolation, NumericalFailure
from deepin.network import RepuNetwork

__all__ = [
    "Task",
    "LossTriple",
    "PenaltyConfig",
    "PenaltyParts",
    "DeepInModel",
    "loss",
    "penalty",
    "objective_and_subgrad",
]


class Task(str, Enum):
    REGRESSION = "regression"
    BINARY = "binary"


class LossTriple(NamedTuple):
    """Loss value with first and second derivatives in the prediction ``u``."""

    value: np.ndarray
    d1: np.ndarray
    d2: np.ndarray


@dataclass
class PenaltyConfig:
    """Penalty weights and truncation thresholds.

    ``lam1``/``lam2`` weight the row/column group lasso on ``B``, ``lam3`` the
    depth penalty and ``lam4`` the l1 norm of the network parameters.  A
    threshold left as ``None`` is chosen relative to the current parameter
    scale at each truncation event (see :func:`deepin.trainer.default_thresholds`).
    """

    lam1: float = 0.0
    lam2: float = 0.0
    lam3: float = 0.0
    lam4: float = 0.0
    tau1: Optional[float] = None
    tau2: Optional[float] = None
    tau3: Optional[float] = None

    def __post_init__(self):
        for name in ("lam1", "lam2", "lam3", "lam4", "tau1", "tau2", "tau3"):
            value = getattr(self, name)
            if value is None:
                continue
            if not np.isfinite(value) or value < 0:
                raise ContractViolation(f"{name} must be a non-negative real, got {value}")
            setattr(self, name, float(value))

    def replace(self, **changes):
        values = {k: getattr(self, k) for k in self.__dataclass_fields__}
        values.update(changes)
        return PenaltyConfig(**values)

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


class PenaltyParts(NamedTuple):
    rho1: float
    rho2: float
    rho31: float
    l1: float
    total: float


def loss(task, u, y):
    """Per-observation loss at prediction ``u`` (a logit for binary tasks)."""
    task = Task(task)
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    if task is Task.REGRESSION:
        r = u - y
        return LossTriple(r * r, 2.0 * r, np.full_like(r, 2.0))
    if np.any((y != 0.0) & (y != 1.0)):
        raise ContractViolation("binary labels must be 0 or 1")
    s = expit(u)
    return LossTriple(np.logaddexp(0.0, u) - y * u, s - y, s * (1.0 - s))


@dataclass(eq=False)
class DeepInModel:
    """Parameters ``mu = (theta, B)`` plus the masks produced by truncation.

    ``B`` has shape ``(rows, d)``; it starts square (``rows == d``) for DeepIn
    and is ``k x d`` for index-model baselines.  ``row_mask``/``col_mask`` mark
    the active rows and columns of ``B`` and ``theta_mask`` the active network
    parameters; inactive entries are exactly zero.
    """

    B: np.ndarray
    net: RepuNetwork
    task: Task = Task.REGRESSION
    row_mask: np.ndarray = None
    col_mask: np.ndarray = None
    theta_mask: np.ndarray = None
    frozen_B: bool = field(default=False)

    def __post_init__(self):
        self.B = np.array(self.B, dtype=float)
        if self.B.ndim != 2:
            raise ContractViolation("B must be a matrix")
        self.task = Task(self.task)
        if self.B.shape[0] != self.net.input_dim:
            raise ContractViolation(
                f"B has {self.B.shape[0]} rows but the network expects {self.net.input_dim} inputs"
            )
        if self.net.output_dim != 1:
            raise ContractViolation("DeepIn networks have a single output")
        rows, cols = self.B.shape
        self.row_mask = _mask_or_default(self.row_mask, rows)
        self.col_mask = _mask_or_default(self.col_mask, cols)
        self.theta_mask = _mask_or_default(self.theta_mask, self.net.theta.size)
        self.apply_masks()

    @property
    def n_features(self):
        return self.B.shape[1]

    def apply_masks(self):
        self.B[~self.row_mask, :] = 0.0
        self.B[:, ~self.col_mask] = 0.0
        self.net.theta[~self.theta_mask] = 0.0
        self.net.touch()

    def copy(self):
        return DeepInModel(
            self.B.copy(), self.net.copy(), self.task,
            self.row_mask.copy(), self.col_mask.copy(), self.theta_mask.copy(),
            self.frozen_B,
        )

    def represent(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.n_features:
            raise ContractViolation(
                f"input has {X.shape[-1]} features, model expects {self.n_features}"
            )
        return X @ self.B.T

    def predict(self, X):
        """``g_theta(B x)``: a float for a vector input, an array for a matrix.

        For binary tasks this is the logit; see :meth:`predict_proba`.
        """
        out = self.net(self.represent(X))
        return float(out[0]) if np.ndim(X) == 1 else out[:, 0]

    def predict_proba(self, X):
        return expit(self.predict(X))

    def predict_label(self, X):
        if self.task is Task.REGRESSION:
            return self.predict(X)
        return (self.predict(X) > 0).astype(float)


def _mask_or_default(mask, n):
    if mask is None:
        return np.ones(n, dtype=bool)
    mask = np.array(mask, dtype=bool).reshape(-1)
    if mask.size != n:
        raise ContractViolation(f"mask has length {mask.size}, expected {n}")
    return mask


def penalty(model, lam):
    """Penalty components and the weighted total.

    ``rho31`` sums ``||W_l - I||_F + ||a_l||_2`` over square hidden-to-hidden
    layers; other layers only carry the l1 term.
    """
    B = model.B
    rho1 = float(np.linalg.norm(B, axis=1).sum())
    rho2 = float(np.linalg.norm(B, axis=0).sum())
    rho31 = 0.0
    for l in model.net.hidden_square_layers():
        W, a = model.net.layers[l]
        rho31 += np.linalg.norm(W - np.eye(W.shape[0])) + np.linalg.norm(a)
    l1 = float(np.abs(model.net.theta).sum())
    total = lam.lam1 * rho1 + lam.lam2 * rho2 + lam.lam3 * rho31 + lam.lam4 * l1
    return PenaltyParts(rho1, rho2, float(rho31), l1, float(total))


def _group_unit(v, axis):
    norms = np.linalg.norm(v, axis=axis, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    return np.where(norms > 0, v / safe, 0.0)


def penalty_subgrad(model, lam):
    """Minimal-norm subgradient of the weighted penalty in ``(B, theta)``."""
    gB = np.zeros_like(model.B)
    if lam.lam1:
        gB += lam.lam1 * _group_unit(model.B, axis=1)
    if lam.lam2:
        gB += lam.lam2 * _group_unit(model.B, axis=0)
    net = model.net
    gtheta = lam.lam4 * np.sign(net.theta) if lam.lam4 else np.zeros_like(net.theta)
    if lam.lam3:
        for l in net.hidden_square_layers():
            W, a = net.layers[l]
            w_sl, a_sl = net.slices[l]
            D = W - np.eye(W.shape[0])
            nd = np.linalg.norm(D)
            if nd > 0:
                gtheta[w_sl] += lam.lam3 * (D / nd).reshape(-1)
            na = np.linalg.norm(a)
            if na > 0:
                gtheta[a_sl] += lam.lam3 * a / na
    return gB, gtheta


def data_term(model, X, y):
    """Mean loss over a batch with its gradients in ``B`` and ``theta``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ContractViolation("batch must be a non-empty matrix")
    if y.shape != (X.shape[0],):
        raise ContractViolation("response length does not match the batch")
    n = X.shape[0]
    Z = model.represent(X)
    out, tape = model.net.forward(Z)
    u = out[:, 0]
    lt = loss(model.task, u, y)
    bad = ~np.isfinite(lt.value) | ~np.isfinite(u)
    if np.any(bad):
        row = int(np.flatnonzero(bad)[0])
        raise NumericalFailure(f"non-finite loss at batch row {row}")
    gtheta, gZ = model.net.backward(tape, lt.d1 / n)
    gB = gZ.T @ X
    if not (np.all(np.isfinite(gtheta)) and np.all(np.isfinite(gB))):
        rows = np.flatnonzero(~np.all(np.isfinite(gZ), axis=1))
        where = f" at batch row {int(rows[0])}" if rows.size else ""
        raise NumericalFailure(f"non-finite gradient{where}")
    return float(lt.value.mean()), gB, gtheta


def objective_and_subgrad(model, X, y, lam):
    """Penalised objective on a batch and a subgradient in ``(B, theta)``.

    Returns ``(objective, grad_B, grad_theta)`` where the objective is the mean
    loss plus ``penalty(model, lam).total``.
    """
    value, gB, gtheta = data_term(model, X, y)
    pB, ptheta = penalty_subgrad(model, lam)
    return value + penalty(model, lam).total, gB + pB, gtheta + ptheta
