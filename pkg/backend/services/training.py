"""
Training Service
Seeded mini-batch training with Adam or SGD and optional global-norm clipping
"""
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from errors import ConfigError, ContractError, EvaluationError, NumericAbortError
from schemas import TrainConfig
from services.core_math import ComputeTape, Matrix, Parameter, backward
from services.data_pipeline import DatasetSplit, StudentSequence, window
from services.metrics import auc, score_sequences
from services.model_registry import forward, model_loss
from services.model_types import ModelState, WindowBatch

logger = logging.getLogger(__name__)


@dataclass
class AdamMoments:
    """First/second moment estimates per parameter name and the step counter"""
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_auc: Optional[float] = None
    seconds: float = 0.0


@dataclass
class TrainHistory:
    epochs: List[EpochRecord] = field(default_factory=list)

    @property
    def losses(self) -> List[float]:
        return [e.loss for e in self.epochs]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(e.epoch, e.loss, e.val_auc, e.seconds) for e in self.epochs],
            columns=["epoch", "loss", "val_auc", "seconds"],
        )

    def save(self, path: Path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g")


@dataclass
class TrainResult:
    state: ModelState
    history: TrainHistory
    skipped_windows: int = 0
    windows: int = 0
    gradient_clip_norm: Optional[float] = None


def _check_gradients(params: Sequence[Parameter]) -> None:
    for p in params:
        if not np.isfinite(p.grad.data).all():
            raise NumericAbortError(f"non-finite gradient in parameter {p.name}")


def sgd_step(params: Sequence[Parameter], learning_rate: float) -> None:
    """w <- w - lr * g for every parameter"""
    _check_gradients(params)
    for p in params:
        p.value = Matrix.wrap(p.value.data - learning_rate * p.grad.data)


def adam_step(params: Sequence[Parameter], moments: AdamMoments, config: TrainConfig) -> AdamMoments:
    """
    One bias-corrected Adam update

    Args:
        params: parameters with accumulated gradients
        moments: state from the previous step (t = 0 before the first)
        config: learning rate, betas and epsilon

    Returns:
        Moments after this step (t incremented)
    """
    _check_gradients(params)
    t = moments.t + 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    m_out: Dict[str, np.ndarray] = {}
    v_out: Dict[str, np.ndarray] = {}
    for p in params:
        g = p.grad.data
        m = b1 * moments.m.get(p.name, np.zeros_like(g)) + (1.0 - b1) * g
        v = b2 * moments.v.get(p.name, np.zeros_like(g)) + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p.value = Matrix.wrap(p.value.data - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps))
        m_out[p.name], v_out[p.name] = m, v
    return AdamMoments(m=m_out, v=v_out, t=t)


def clip_global_norm(params: Sequence[Parameter], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm; returns the norm before"""
    total = float(np.sqrt(sum(float(np.sum(p.grad.data ** 2)) for p in params)))
    if total > max_norm:
        scale = max_norm / total
        for p in params:
            p.grad = Matrix.wrap(p.grad.data * scale)
    return total


def training_windows(sequences: Sequence[StudentSequence], max_len: int) -> tuple:
    """Usable windows (length >= 2) and the number skipped"""
    windows = [w for seq in sequences for w in window(seq, max_len)]
    usable = [w for w in windows if w.usable]
    return usable, len(windows) - len(usable)


def train(
    state: ModelState,
    data: DatasetSplit,
    config: TrainConfig,
    seed: Optional[int] = None,
) -> TrainResult:
    """
    Train a model in place on the train split

    Each epoch shuffles windows with a seeded generator and walks them in
    mini-batches (the final short batch is kept). Per batch: forward, masked
    loss, backward, optional clipping, optimizer step.

    Args:
        state: initialized model; its parameters are updated
        data: preprocessed split
        config: training settings
        seed: overrides config.seed

    Returns:
        TrainResult with the final state and per-epoch history
    """
    seed = config.seed if seed is None else seed
    if seed is None:
        raise ConfigError("training needs a seed")
    if state.architecture == "sakt" and config.max_seq_len > state.config.sakt_max_len:
        raise ConfigError(
            f"max_seq_len {config.max_seq_len} exceeds sakt_max_len {state.config.sakt_max_len}"
        )
    windows, skipped = training_windows(data.train, config.max_seq_len)
    if skipped:
        logger.warning(f"Skipped {skipped} windows shorter than 2 interactions")
    history = TrainHistory()
    result = TrainResult(
        state=state, history=history, skipped_windows=skipped, windows=len(windows),
        gradient_clip_norm=config.gradient_clip_norm,
    )
    if config.epochs == 0:
        return result
    if not windows:
        raise ContractError("train split has no window with at least 2 interactions")

    shuffle_seq, dropout_seq = np.random.SeedSequence(seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    dropout_rng = np.random.default_rng(dropout_seq)
    params = state.parameters()
    moments = AdamMoments()

    logger.info(
        f"Training {state.architecture} on {len(windows)} windows: {config.epochs} epochs, "
        f"batch {config.batch_size}, {config.optimizer} lr={config.learning_rate}"
    )
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        order = shuffle_rng.permutation(len(windows))
        weighted_loss, targets = 0.0, 0.0
        for batch_no, start in enumerate(range(0, len(order), config.batch_size), start=1):
            # sorted so a batch's content alone fixes the arithmetic order
            chunk = [windows[i] for i in np.sort(order[start:start + config.batch_size])]
            batch = WindowBatch.from_sequences(chunk, state.num_skills)
            for p in params:
                p.zero_grad()
            tape = ComputeTape()
            try:
                trace = forward(tape, state, batch, rng=dropout_rng)
                loss = model_loss(trace, state)
            except EvaluationError as e:
                raise NumericAbortError(f"non-finite loss at epoch {epoch} batch {batch_no}: {e}") from e
            value = loss.item()
            if not np.isfinite(value):
                raise NumericAbortError(f"non-finite loss at epoch {epoch} batch {batch_no}")
            backward(tape, loss)
            if config.gradient_clip_norm is not None:
                clip_global_norm(params, config.gradient_clip_norm)
            if config.optimizer == "adam":
                moments = adam_step(params, moments, config)
            else:
                sgd_step(params, config.learning_rate)
            count = float(batch.target_weights().sum())
            weighted_loss += value * count
            targets += count

        record = EpochRecord(epoch=epoch, loss=weighted_loss / targets)
        if config.log_val_auc and data.test:
            record.val_auc = auc(score_sequences(state, data.test, config.max_seq_len, config.batch_size))
        record.seconds = time.perf_counter() - started
        history.epochs.append(record)
        logger.info(
            f"epoch {epoch}/{config.epochs} loss={record.loss:.6f}"
            + (f" val_auc={record.val_auc:.4f}" if record.val_auc is not None else "")
            + f" ({record.seconds:.1f}s)"
        )
    return result
