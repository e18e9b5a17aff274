"""JSON experiment configuration.

Every key is optional; omitted keys take the documented defaults and unknown
keys are rejected so typos do not silently fall back to a default.
"""

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from deepin.datagen import SyntheticSpec
from deepin.errors import ContractViolation, FormatError
from deepin.model import PenaltyConfig
from deepin.trainer import TrainOptions

__all__ = [
    "CovariateStudyConfig",
    "RepresentationStudyConfig",
    "ExperimentConfig",
    "load_config",
]

METHODS = ("deepin", "vanilla-dnn", "index-model")


def _build(cls, doc, where):
    if doc is None:
        return cls()
    if not isinstance(doc, dict):
        raise FormatError(f"{where} must be an object")
    names = {f.name for f in fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise FormatError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return cls(**doc)
    except TypeError as exc:
        raise FormatError(f"invalid {where}: {exc}") from exc


@dataclass
class CovariateStudyConfig:
    """Linear-Gaussian design ``y = beta * x1 + sigma * eps`` with ``x2`` null."""

    n: int = 5000
    reps: int = 200
    beta: float = 1.0
    sigma: float = 1.0
    hidden: list = field(default_factory=lambda: [8])
    lam1: float = 0.05
    epochs: int = 150
    batch_size: int = 1000
    lr: float = 0.01
    alpha: float = 0.05


@dataclass
class RepresentationStudyConfig:
    """Teacher ``z1 + z2^2 - 1`` on three inputs; the third row is inert.

    The null keeps rows ``{1, 2}``; the alternative keeps only row 1.
    """

    n_null: int = 2000
    n_power: int = 4000
    reps_null: int = 500
    reps_power: int = 100
    sigma: float = 0.5
    hidden: list = field(default_factory=lambda: [16])
    lam1: float = 0.02
    epochs: int = 100
    batch_size: int = 64
    lr: float = 0.01
    alpha: float = 0.05
    combine: str = "sum"


@dataclass
class ExperimentConfig:
    data: Optional[dict] = None
    data_csv: Optional[str] = None
    response: str = "y"
    test_size: int = 4000
    test_fraction: float = 0.2
    method: str = "deepin"
    k: Optional[int] = None
    hidden: list = field(default_factory=lambda: [32, 32])
    power: int = 2
    init_noise: float = 0.01
    penalty: dict = field(default_factory=dict)
    tuning: Optional[dict] = None
    training: dict = field(default_factory=dict)
    replications: int = 1
    seed: int = 0
    workers: int = 1
    save_models: bool = True
    covariate_study: dict = field(default_factory=dict)
    representation_study: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ContractViolation(f"method must be one of {METHODS}, got {self.method!r}")
        if self.method == "index-model" and (self.k is None or self.k < 1):
            raise ContractViolation("index-model needs a positive k")
        if self.replications < 1:
            raise ContractViolation("replications must be at least 1")
        if self.workers < 1:
            raise ContractViolation("workers must be at least 1")
        if self.data is not None and self.data_csv is not None:
            raise ContractViolation("give either a synthetic data spec or data_csv, not both")
        # Build the typed views eagerly so bad values fail at load time.
        self.penalty_config()
        self.train_options()
        self.synthetic_spec()
        self.covariate()
        self.representation()

    def synthetic_spec(self, seed=None):
        if self.data_csv is not None:
            return None
        spec = _build(SyntheticSpec, self.data, "data")
        if seed is not None:
            spec = SyntheticSpec(**{**spec.to_dict(), "seed": seed})
        return spec

    def penalty_config(self):
        return _build(PenaltyConfig, self.penalty, "penalty")

    def train_options(self, seed=None):
        opts = _build(TrainOptions, self.training, "training")
        return opts if seed is None else opts.replace(seed=seed)

    def covariate(self):
        return _build(CovariateStudyConfig, self.covariate_study, "covariate_study")

    def representation(self):
        return _build(RepresentationStudyConfig, self.representation_study,
                      "representation_study")

    def to_dict(self):
        return asdict(self)


def load_config(path=None, overrides=None):
    """Read a JSON config file (or start from defaults) and apply overrides."""
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise FormatError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise FormatError(f"malformed config {path}: {exc}") from exc
    doc.update(overrides or {})
    return _build(ExperimentConfig, doc, "config")
