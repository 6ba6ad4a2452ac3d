"""Loss, Adam, gradient clipping, the training loop, seeded ensembles and checkpoints."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import models as M
from . import tensor as T
from .data import BasinRecord, BatchSampler, NormalizationStats, SplitSpec, compute_norm_stats, input_matrix
from .errors import CheckpointError, LossError, ParameterError, TrainingError
from .tensor import RngStream, Tensor

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
LOSS_EPS = 0.1
MAX_RESAMPLES = 100


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    n_iterations: int = 1000
    seq_len: int = 365
    seed: int = 0
    clip_norm: float = 1.0
    eval_every: int = 50
    head_mode: str | None = None  # None: seq2one for the vanilla Transformer, seq2seq otherwise
    loss: str = "basin_weighted"
    loss_eps: float = LOSS_EPS

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ParameterError("learning_rate must be > 0")
        if not self.clip_norm > 0:
            raise ParameterError("clip_norm must be > 0")
        # 0 iterations is accepted: it returns the initialization
        if self.n_iterations < 0:
            raise ParameterError("n_iterations must be >= 0")
        if self.batch_size < 1 or self.seq_len < 1 or self.eval_every < 1:
            raise ParameterError("batch_size, seq_len and eval_every must be >= 1")
        if self.head_mode not in (None, "seq2seq", "seq2one"):
            raise ParameterError(f"unknown head_mode {self.head_mode!r}")
        if self.loss not in ("basin_weighted", "mse"):
            raise ParameterError(f"unknown loss {self.loss!r}")
        if not 0 <= self.seed < 2**64:
            raise ParameterError("seed must be a 64-bit unsigned integer")

    def resolved_head(self, spec: M.ModelSpec) -> str:
        head = self.head_mode or ("seq2one" if spec.variant == "transformer_vanilla" else "seq2seq")
        if head == "seq2seq" and not spec.per_step_output:
            raise ParameterError("the vanilla Transformer only supports seq2one training")
        return head

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


# ---------------------------------------------------------------------------
# loss and optimizer


def basin_weighted_mse(yhat: Tensor, y: np.ndarray, mask: np.ndarray, basin_std: np.ndarray,
                       eps: float = LOSS_EPS) -> Tensor:
    """Mean over observed elements of ``(yhat - y)² / (basin_std + eps)²``."""
    y = np.asarray(y, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if yhat.shape != y.shape or mask.shape != y.shape:
        raise ParameterError(f"yhat {list(yhat.shape)}, y {list(y.shape)} and mask {list(mask.shape)} must agree")
    basin_std = np.asarray(basin_std, dtype=np.float64)
    if basin_std.shape != (y.shape[0],) or np.any(basin_std < 0):
        raise ParameterError("basin_std must be a non-negative [batch] vector")
    count = mask.sum()
    if count == 0:
        raise LossError("every target in the batch is masked")
    weight = mask / (basin_std.reshape((-1,) + (1,) * (y.ndim - 1)) + eps) ** 2
    diff = yhat - Tensor._wrap(y)
    return T.sum(diff * diff * Tensor._wrap(weight)) * (1.0 / count)


def masked_mse(yhat: Tensor, y: np.ndarray, mask: np.ndarray) -> Tensor:
    mask = np.asarray(mask, dtype=np.float64)
    count = mask.sum()
    if count == 0:
        raise LossError("every target in the batch is masked")
    diff = yhat - Tensor._wrap(np.asarray(y, dtype=np.float64))
    return T.sum(diff * diff * Tensor._wrap(mask)) * (1.0 / count)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update applied in place to ``params[name].data``."""
    for name, p in params.items():
        if p.grad is None:
            raise TrainingError(f"parameter {name} has no gradient", parameter=name)
        if not np.all(np.isfinite(p.grad)):
            raise TrainingError(f"non-finite gradient in parameter {name}", parameter=name)
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return math.sqrt(float(np.sum([np.sum(g * g) for g in grads])))


def clip_gradients(grads: Sequence[np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    if not max_norm > 0:
        raise ParameterError("max_norm must be > 0")
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


# ---------------------------------------------------------------------------
# checkpoints


@dataclass(eq=False)
class Checkpoint:
    spec: M.ModelSpec
    weights: dict[str, Tensor]
    stats: NormalizationStats
    config: TrainConfig
    seed: int
    iteration: int
    split: SplitSpec | None = None

    @property
    def label(self) -> str:
        return f"{self.spec.variant}-seed{self.seed}"

    def model(self) -> M.SequenceModel:
        return M.SequenceModel(self.spec, self.weights)

    def simulate(self, record: BasinRecord, split: SplitSpec, seq_len: int | None = None):
        """Sliding final-position predictions (mm/day) for each test day with a full lookback."""
        seq_len = seq_len or self.spec.seq_len
        x = input_matrix(record, self.stats)
        in_test = (record.dates >= split.test_start) & (record.dates <= split.test_end)
        ends = np.flatnonzero(in_test)
        ends = ends[ends >= seq_len - 1]
        if ends.size == 0:
            raise ParameterError(f"basin {record.basin_id}: no test day has a full {seq_len}-day lookback")
        windows = x[ends[:, None] + np.arange(-seq_len + 1, 1)]
        z = self.model().predict_last(windows)
        return record.dates[ends], self.stats.destandardize_q(z)


def _meta(ckpt: Checkpoint) -> dict:
    return {
        "kind": "checkpoint",
        "stats": ckpt.stats.to_dict(),
        "config": ckpt.config.to_dict(),
        "seed": ckpt.seed,
        "iteration": ckpt.iteration,
        "split": ckpt.split.to_dict() if ckpt.split is not None else None,
    }


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    return M.dumps_weights(ckpt.spec, ckpt.weights, _meta(ckpt))


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(checkpoint_bytes(ckpt))
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    spec, weights, meta = M.loads_weights(blob)
    if meta.get("kind") != "checkpoint":
        raise CheckpointError(f"{path} holds bare weights, not a training checkpoint")
    split = SplitSpec.from_dict(meta["split"]) if meta.get("split") else None
    return Checkpoint(spec, weights, NormalizationStats.from_dict(meta["stats"]),
                      TrainConfig.from_dict(meta["config"]), int(meta["seed"]), int(meta["iteration"]), split)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    trace: list[tuple[int, float]]  # (iteration, mean loss over the preceding eval_every steps)
    losses: np.ndarray  # per-iteration loss

    def trace_csv(self) -> str:
        return "iteration,loss\n" + "".join(f"{i},{v!r}\n" for i, v in self.trace)


def train(spec: M.ModelSpec, records: Sequence[BasinRecord], split: SplitSpec, config: TrainConfig,
          stats: NormalizationStats | None = None,
          on_trace: Callable[[int, float], None] | None = None) -> TrainResult:
    """Sample → forward → loss → backward → clip → Adam, ``config.n_iterations`` times.

    One ``RngStream(config.seed)`` is split into independent streams for
    weight init, batch sampling and dropout.
    """
    if spec.seq_len != config.seq_len:
        raise ParameterError(f"spec.seq_len={spec.seq_len} differs from config.seq_len={config.seq_len}")
    head = config.resolved_head(spec)
    if stats is None:
        stats = compute_norm_stats(records, split)
    if stats.input_dim != spec.input_dim:
        raise ParameterError(f"data provide {stats.input_dim} inputs, spec.input_dim={spec.input_dim}")
    init_rng, sample_rng, dropout_rng = RngStream(config.seed).split(3)
    model = M.SequenceModel.initialize(spec, init_rng)
    sampler = BatchSampler(records, stats, split, config.seq_len, head)
    drop = M.DropoutState(spec.dropout_rate, dropout_rng, training=True)
    state = AdamState()
    losses = np.empty(config.n_iterations)
    trace = []
    params = model.weights

    for it in range(config.n_iterations):
        for _ in range(MAX_RESAMPLES):
            batch = sampler.sample(config.batch_size, sample_rng)
            if batch.mask.any():
                break
        else:
            raise TrainingError(f"{MAX_RESAMPLES} consecutive fully-masked batches", iteration=it)
        T.reset_tape()
        yhat = model(batch.x, drop)
        yhat = yhat.reshape(batch.y.shape) if head == "seq2one" and yhat.ndim == 2 else yhat
        if head == "seq2one" and yhat.shape[1] != 1:
            yhat = T.slice_axis(yhat, 1, yhat.shape[1] - 1, yhat.shape[1])
        if config.loss == "basin_weighted":
            loss = basin_weighted_mse(yhat, batch.y, batch.mask, batch.basin_std, config.loss_eps)
        else:
            loss = masked_mse(yhat, batch.y, batch.mask)
        value = loss.item()
        if not math.isfinite(value):
            T.reset_tape()
            raise TrainingError(f"loss diverged ({value}) at iteration {it}", iteration=it)
        model.zero_grad()
        T.backward(loss)
        clip_gradients([p.grad for p in params.values()], config.clip_norm)
        try:
            adam_step(params, state, config.learning_rate)
        except TrainingError as exc:
            raise TrainingError(f"{exc} at iteration {it}", iteration=it, parameter=exc.parameter) from None
        losses[it] = value
        if (it + 1) % config.eval_every == 0 or it + 1 == config.n_iterations:
            window = losses[max(0, it + 1 - config.eval_every): it + 1]
            trace.append((it + 1, float(window.mean())))
            if on_trace is not None:
                on_trace(it + 1, trace[-1][1])
            logger.debug("%s seed %d iter %d loss %.5f", spec.variant, config.seed, it + 1, trace[-1][1])

    for p in params.values():
        p.zero_grad()
    ckpt = Checkpoint(spec, params, stats, config, config.seed, config.n_iterations, split)
    return TrainResult(ckpt, trace, losses)


@dataclass
class MemberResult:
    seed: int
    result: TrainResult | None = None
    error: Exception | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def checkpoint(self) -> Checkpoint:
        if self.result is None:
            raise self.error
        return self.result.checkpoint


def train_ensemble(spec: M.ModelSpec, records: Sequence[BasinRecord], split: SplitSpec, config: TrainConfig,
                   seeds: Sequence[int], workers: int = 1) -> list[MemberResult]:
    """Train one isolated member per seed; a failing member does not stop its siblings."""
    seeds = [int(s) for s in seeds]
    if len(set(seeds)) != len(seeds):
        raise ParameterError(f"ensemble seeds must be distinct, got {seeds}")
    stats = compute_norm_stats(records, split)

    def run(seed: int) -> MemberResult:
        cfg = TrainConfig(**{**config.to_dict(), "seed": seed})
        try:
            return MemberResult(seed, train(spec, records, split, cfg, stats))
        except (TrainingError, ParameterError) as exc:
            logger.warning("ensemble member seed=%d failed: %s", seed, exc)
            return MemberResult(seed, error=exc)

    if workers <= 1:
        return [run(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, seeds))
