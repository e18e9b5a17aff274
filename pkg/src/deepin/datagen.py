"""Seeded synthetic regression and classification generators.

Every dataset comes with its ground truth: the informative columns, the true
representation matrix ``B0`` and the noiseless signal ``f0``.  The signal is a
fixed function of ``x``: its centring and scaling constants are estimated once
per seed on a reference sample and then frozen, so fresh test data drawn from
:meth:`Signal.sample` share the training signal.
"""

import math
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np
from scipy.special import expit

from deepin.errors import ContractViolation, NumericalFailure
from deepin.network import RepuNetwork
from deepin.numerics import make_rng, spawn_seed

__all__ = [
    "SyntheticSpec",
    "Truth",
    "LabeledDataset",
    "Signal",
    "gen_X",
    "covariance",
    "draw_B0",
    "build_signal",
    "gen_setting",
]

REFERENCE_SIZE = 10_000

_LINKS = (
    lambda t: t,
    lambda t: t * t,
    lambda t: np.sin(np.pi * t),
    np.tanh,
    np.abs,
)


@dataclass
class SyntheticSpec:
    """Parameters of one synthetic design.

    ``d0=None`` means 10 for setting 3 and 5 otherwise.  ``sigma=None`` sets
    the noise so the signal-to-noise variance ratio is 3.  ``signal_scale``
    multiplies the standardised signal; 0 gives a pure-noise response.
    """

    setting: int = 1
    n: int = 2000
    d: int = 200
    rho: float = 0.0
    s0: int = 10
    d0: Optional[int] = None
    sigma: Optional[float] = None
    seed: int = 0
    scheme: str = "equicorrelated"
    signal_scale: float = 1.0
    teacher_hidden: tuple = (32,)

    def __post_init__(self):
        if self.setting not in (1, 2, 3, 4):
            raise ContractViolation(f"setting must be 1, 2, 3 or 4, got {self.setting}")
        if self.d0 is None:
            self.d0 = 10 if self.setting == 3 else 5
        if self.sigma is None:
            self.sigma = 1.0 / math.sqrt(3.0)
        self.teacher_hidden = tuple(int(h) for h in self.teacher_hidden)
        if self.n < 1 or self.d < 1:
            raise ContractViolation("n and d must be positive")
        if not 1 <= self.d0 <= self.s0 <= self.d:
            raise ContractViolation("need 1 <= d0 <= s0 <= d")
        if not 0.0 <= self.rho < 1.0:
            raise ContractViolation(f"rho must lie in [0, 1), got {self.rho}")
        if self.scheme not in ("equicorrelated", "ar1"):
            raise ContractViolation(f"unknown correlation scheme {self.scheme!r}")
        if self.sigma < 0:
            raise ContractViolation("sigma must be non-negative")

    @property
    def task(self):
        return "binary" if self.setting == 4 else "regression"

    def to_dict(self):
        out = asdict(self)
        out["teacher_hidden"] = list(self.teacher_hidden)
        return out


@dataclass
class Truth:
    support: np.ndarray
    B0: np.ndarray
    f0: np.ndarray


@dataclass
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray
    truth: Truth
    signal: "Signal" = field(repr=False, default=None)


def covariance(d, rho, scheme="equicorrelated"):
    """Equicorrelated ``(1 - rho) I + rho 11'`` or AR(1) ``rho^|i-j|``."""
    if not 0.0 <= rho < 1.0:
        raise ContractViolation(f"rho must lie in [0, 1), got {rho}")
    if scheme == "equicorrelated":
        return (1.0 - rho) * np.eye(d) + rho * np.ones((d, d))
    if scheme == "ar1":
        idx = np.arange(d)
        return rho ** np.abs(idx[:, None] - idx[None, :])
    raise ContractViolation(f"unknown correlation scheme {scheme!r}")


def gen_X(n, d, rho, scheme, rng):
    """``n`` i.i.d. rows from ``N(0, Sigma_rho)`` via the Cholesky factor."""
    sigma = covariance(d, rho, scheme)
    try:
        L = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"covariance Cholesky failed: {exc}") from exc
    return rng.standard_normal((n, d)) @ L.T


def draw_B0(d0, s0, d, rng, min_share=0.5):
    """Random ``d0 x d`` matrix with orthonormal rows supported on the first
    ``s0`` columns.

    Draws are repeated until every informative column carries at least
    ``min_share`` of the average squared column norm ``d0 / s0``, so no
    informative variable is nearly invisible.
    """
    for _ in range(1000):
        G = rng.standard_normal((s0, d0))
        Q, _ = np.linalg.qr(G)
        block = Q.T
        if np.min(np.sum(block**2, axis=0)) >= min_share * d0 / s0:
            break
    B0 = np.zeros((d0, d))
    B0[:, :s0] = block
    return B0


@dataclass(eq=False)
class Signal:
    """Noiseless regression function ``f0(x) = scale * (raw(B0 x) - shift) / spread``."""

    setting: int
    B0: np.ndarray
    teacher: Optional[RepuNetwork] = None
    shift: float = 0.0
    spread: float = 1.0
    scale: float = 1.0
    sigma: float = 0.0
    rho: float = 0.0
    scheme: str = "equicorrelated"

    def raw(self, Z):
        if self.setting == 3:
            return self.teacher(Z)[:, 0]
        d0 = Z.shape[1]
        f = np.zeros(Z.shape[0])
        for k in range(d0):
            f += _LINKS[k % len(_LINKS)](Z[:, k])
        if self.setting in (2, 4):
            for k in range(d0):
                for l in range(k + 1, d0):
                    f += Z[:, k] * Z[:, l]
        return f

    def __call__(self, X):
        Z = np.asarray(X, dtype=float) @ self.B0.T
        return self.scale * (self.raw(Z) - self.shift) / self.spread

    def respond(self, f0, rng):
        if self.setting == 4:
            return (rng.uniform(size=f0.shape) < expit(f0)).astype(float)
        return f0 + self.sigma * rng.standard_normal(f0.shape)

    def sample(self, n, rng):
        """Fresh ``(X, y, f0)`` from the same design."""
        X = gen_X(n, self.B0.shape[1], self.rho, self.scheme, rng)
        f0 = self(X)
        return X, self.respond(f0, rng), f0


def build_signal(spec):
    """Ground-truth ``B0`` and frozen signal for ``spec`` (data not drawn)."""
    rng = make_rng(spec.seed)
    struct_rng = make_rng(spawn_seed(rng))
    ref_rng = make_rng(spawn_seed(rng))
    B0 = draw_B0(spec.d0, spec.s0, spec.d, struct_rng)
    teacher = None
    if spec.setting == 3:
        dims = (spec.d0,) + spec.teacher_hidden + (1,)
        teacher = RepuNetwork.initialize(dims, struct_rng, identity_square=False)
        for _, a in teacher.layers[:-1]:
            a[:] = struct_rng.uniform(-0.5, 0.5, size=a.shape)
    signal = Signal(spec.setting, B0, teacher, sigma=spec.sigma, rho=spec.rho,
                    scheme=spec.scheme)
    X_ref = gen_X(REFERENCE_SIZE, spec.d, spec.rho, spec.scheme, ref_rng)
    raw = signal.raw(X_ref @ B0.T)
    signal.shift = float(raw.mean())
    signal.spread = float(raw.std()) or 1.0
    signal.scale = float(spec.signal_scale)
    return signal, rng


def gen_setting(spec):
    """Draw a dataset for ``spec``; same spec and seed give identical bits."""
    signal, rng = build_signal(spec)
    data_rng = make_rng(spawn_seed(rng))
    X, y, f0 = signal.sample(spec.n, data_rng)
    support = np.flatnonzero(np.any(signal.B0 != 0, axis=0))
    return LabeledDataset(X, y, Truth(support, signal.B0.copy(), f0), signal)
