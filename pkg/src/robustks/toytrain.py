"""Desk-scale training runs: many small MLPs on 2-D Gaussian blobs.

Each model draws from up to three independent random streams: parameter
initialisation, mini-batch shuffling, and bootstrap resampling of the training
set.  A :class:`Scenario` decides which streams vary with the model index; the
others are pinned to fixed constants so they are identical across models.

Network outputs are raw logits ``(m_plus, m_minus)``: column 0 scores class 1
and column 1 scores class 0, so the logit gap is ``out[:, 0] - out[:, 1]``.
"""
from __future__ import annotations

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from robustks.errors import DataValidationError, NumericalFailure
from robustks.model_metrics import LogitGapMatrix, logit_gap

log = logging.getLogger(__name__)

# Stream tags mixed into seeds: SeedSequence([master_seed, model, tag]) when a
# source is active, SeedSequence([INACTIVE_SEED, tag]) when it is not.
INIT, BATCH, DATA = 0, 1, 2
BASE_DATA, TEST_DATA = 3, 4
INACTIVE_SEED = 20240601


class Scenario(enum.Enum):
    INIT_ONLY = "init"
    BATCH_ONLY = "batch"
    TRAIN_ONLY = "train"
    ALL = "all"

    @property
    def active(self) -> frozenset:
        return {
            Scenario.INIT_ONLY: frozenset({INIT}),
            Scenario.BATCH_ONLY: frozenset({BATCH}),
            Scenario.TRAIN_ONLY: frozenset({DATA}),
            Scenario.ALL: frozenset({INIT, BATCH, DATA}),
        }[self]


@dataclass(frozen=True)
class BlobSpec:
    """Two Gaussian classes in the plane; ``p1`` is the probability of label 1."""

    mean0: tuple = (-1.0, 0.0)
    mean1: tuple = (1.0, 0.0)
    cov0: tuple = ((1.0, 0.0), (0.0, 1.0))
    cov1: tuple = ((1.0, 0.0), (0.0, 1.0))
    p1: float = 0.5


@dataclass(frozen=True)
class ToyDataset:
    features: np.ndarray
    labels: np.ndarray

    @property
    def n(self) -> int:
        return self.labels.size


@dataclass(frozen=True)
class TrainConfig:
    scenario: Scenario = Scenario.ALL
    M: int = 20
    epochs: int = 50
    batch_size: int = 50
    learning_rate: float = 0.05
    hidden_widths: tuple = (32,)
    n_train: int = 2000
    n_test: int = 1000
    master_seed: int = 0
    snapshot_epochs: tuple | None = None
    blobs: BlobSpec = field(default_factory=BlobSpec)
    deterministic_init: bool = False

    def __post_init__(self):
        if isinstance(self.scenario, str):
            object.__setattr__(self, "scenario", Scenario(self.scenario))
        for name in ("M", "epochs", "batch_size", "n_train", "n_test"):
            if int(getattr(self, name)) < 1:
                raise DataValidationError(f"{name} must be positive")
        if not self.learning_rate > 0:
            raise DataValidationError("learning_rate must be positive")
        if any(int(w) < 1 for w in self.hidden_widths):
            raise DataValidationError("hidden widths must be positive")
        if self.master_seed < 0:
            raise DataValidationError("master_seed must be nonnegative")
        snaps = self.snapshot_epochs
        snaps = tuple(range(1, self.epochs + 1)) if snaps is None else tuple(sorted({int(e) for e in snaps}))
        if not snaps or snaps[0] < 1 or snaps[-1] > self.epochs:
            raise DataValidationError(f"snapshot epochs must lie in [1, {self.epochs}]")
        object.__setattr__(self, "snapshot_epochs", snaps)

    @property
    def widths(self) -> tuple:
        return (2, *(int(w) for w in self.hidden_widths), 2)


@dataclass
class MlpParams:
    """Weights ``W[l]`` of shape ``(out, in)`` and biases ``b[l]`` of shape ``(out,)``."""

    weights: list
    biases: list

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in (*self.weights, *self.biases))


@dataclass
class ModelRun:
    """Training record for one model: snapshots plus the random streams it used."""

    index: int
    snapshots: dict
    data_indices: np.ndarray
    first_epoch_order: np.ndarray
    losses: list


def _stream(config: TrainConfig, k: int, tag: int) -> np.random.Generator:
    if tag in config.scenario.active:
        return np.random.default_rng([config.master_seed, k, tag])
    return np.random.default_rng([INACTIVE_SEED, tag])


def generate_dataset(spec: BlobSpec, n: int, seed) -> ToyDataset:
    if n < 2:
        raise DataValidationError("need at least 2 points")
    means = [np.asarray(spec.mean0, dtype=float), np.asarray(spec.mean1, dtype=float)]
    covs = [np.asarray(spec.cov0, dtype=float), np.asarray(spec.cov1, dtype=float)]
    factors = []
    for c in covs:
        if c.shape != (2, 2) or np.linalg.det(c) <= 0 or not np.allclose(c, c.T):
            raise DataValidationError("blob covariances must be symmetric positive definite 2x2 matrices")
        factors.append(np.linalg.cholesky(c))
    rng = np.random.default_rng(seed)
    while True:
        labels = (rng.random(n) < spec.p1).astype(np.int64)
        if 0 < labels.sum() < n:
            break
    z = rng.standard_normal((n, 2))
    features = np.empty((n, 2))
    for cls in (0, 1):
        sel = labels == cls
        features[sel] = means[cls] + z[sel] @ factors[cls].T
    return ToyDataset(features, labels)


def init_params(widths, seed=None) -> MlpParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.

    ``seed=None`` selects the deterministic template instead: entry ``(i, j)``
    of a layer is ``((3 i + 7 j) mod 11 - 5) / (5 sqrt(fan_in))``, which is
    nonzero in most positions and differs across rows so hidden units do not
    start out identical.
    """
    widths = [int(w) for w in widths]
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise DataValidationError("widths must list at least input and output sizes, all positive")
    rng = None if seed is None else np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        if rng is None:
            i, j = np.meshgrid(np.arange(fan_out), np.arange(fan_in), indexing="ij")
            w = (((3 * i + 7 * j) % 11) - 5) / 5.0 * bound
        else:
            w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def _forward_all(params: MlpParams, x):
    acts = [x]
    pre = None
    # overflow is reported by the callers' finiteness checks instead
    with np.errstate(over="ignore", invalid="ignore"):
        for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
            pre = acts[-1] @ w.T + b
            if layer < len(params.weights) - 1:
                acts.append(np.maximum(pre, 0.0))
    return acts, pre


def forward(params: MlpParams, x):
    """Raw logits ``(m_plus, m_minus)`` for one point ``(2,)`` or a batch ``(n, 2)``."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    _, out = _forward_all(params, np.atleast_2d(x))
    if not np.all(np.isfinite(out)):
        raise NumericalFailure("non-finite network output")
    if single:
        return float(out[0, 0]), float(out[0, 1])
    return out[:, 0], out[:, 1]


def loss_and_gradient(params: MlpParams, features, labels):
    """Mean softmax cross-entropy over the batch and its exact gradient."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    labels = np.asarray(labels)
    if features.shape[0] == 0:
        raise DataValidationError("empty batch")
    acts, logits = _forward_all(params, features)
    n = features.shape[0]
    # column 0 is the class-1 logit
    target = np.where(labels == 1, 0, 1)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_norm - shifted[np.arange(n), target]))
    if not np.isfinite(loss):
        raise NumericalFailure("non-finite loss")

    delta = np.exp(shifted - log_norm[:, None])
    delta[np.arange(n), target] -= 1.0
    delta /= n
    grad_w = [None] * len(params.weights)
    grad_b = [None] * len(params.biases)
    for layer in range(len(params.weights) - 1, -1, -1):
        grad_w[layer] = delta.T @ acts[layer]
        grad_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ params.weights[layer]) * (acts[layer] > 0)
    return loss, MlpParams(grad_w, grad_b)


def _train_one(config: TrainConfig, base: ToyDataset, k: int) -> ModelRun:
    data_rng = _stream(config, k, DATA)
    if DATA in config.scenario.active:
        idx = data_rng.integers(0, base.n, size=config.n_train)
    else:
        idx = np.arange(base.n)
    x, y = base.features[idx], base.labels[idx]
    init_seed = None if (config.deterministic_init and INIT not in config.scenario.active) else _stream(
        config, k, INIT
    )
    params = init_params(config.widths, init_seed)
    batch_rng = _stream(config, k, BATCH)
    snapshots, losses, first_order = {}, [], None
    snap_set = set(config.snapshot_epochs)
    for epoch in range(1, config.epochs + 1):
        order = batch_rng.permutation(y.size)
        if first_order is None:
            first_order = order.copy()
        total = 0.0
        for start in range(0, y.size, config.batch_size):
            sel = order[start:start + config.batch_size]
            try:
                loss, grad = loss_and_gradient(params, x[sel], y[sel])
            except NumericalFailure as exc:
                raise NumericalFailure(f"model {k} diverged in epoch {epoch}: {exc}") from exc
            for w, gw in zip(params.weights, grad.weights):
                w -= config.learning_rate * gw
            for b, gb in zip(params.biases, grad.biases):
                b -= config.learning_rate * gb
            total += loss * sel.size
        if not params.all_finite():
            raise NumericalFailure(f"model {k} produced non-finite parameters in epoch {epoch}")
        losses.append(total / y.size)
        if epoch in snap_set:
            snapshots[epoch] = params.copy()
    log.debug("model %d final epoch loss %.4f", k, losses[-1])
    return ModelRun(k, snapshots, idx, first_order, losses)


def base_training_set(config: TrainConfig) -> ToyDataset:
    return generate_dataset(config.blobs, config.n_train, np.random.SeedSequence([config.master_seed, BASE_DATA]))


def train(config: TrainConfig, base_dataset: ToyDataset | None = None, n_jobs: int = 1) -> list:
    """Train ``config.M`` models; returns one :class:`ModelRun` per model, in index order."""
    base = base_training_set(config) if base_dataset is None else base_dataset
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(lambda k: _train_one(config, base, k), range(config.M)))
    return [_train_one(config, base, k) for k in range(config.M)]


def evaluate_gaps(params: MlpParams, features) -> np.ndarray:
    return logit_gap(*forward(params, features))


def run_scenario(config: TrainConfig, test_seed: int, n_jobs: int = 1) -> dict:
    """Train all models and return ``{epoch: LogitGapMatrix}`` on one shared test set."""
    test = generate_dataset(config.blobs, config.n_test, np.random.SeedSequence([test_seed, TEST_DATA]))
    runs = train(config, n_jobs=n_jobs)
    model_ids = [f"model_{r.index:03d}" for r in runs]
    point_ids = [f"p{j:05d}" for j in range(test.n)]
    out = {}
    for epoch in config.snapshot_epochs:
        gaps = np.array([evaluate_gaps(r.snapshots[epoch], test.features) for r in runs])
        out[epoch] = LogitGapMatrix(gaps, test.labels, model_ids, point_ids)
    return out
