"""
Training objectives: masked next-step cross-entropy and the DKT+ regularized loss
"""
import logging

import numpy as np

from errors import ContractError
from schemas import DktPlusConfig
from services.core_math import (
    Node,
    affine,
    clip,
    elementwise,
    log,
    reduce_sum,
    slice_cols,
)
from services.model_types import PredictionTrace

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-7


def masked_bce(probs: Node, labels: np.ndarray, weights: np.ndarray) -> Node:
    """Mean binary cross-entropy over positions with weight 1; probabilities clamped first"""
    count = float(weights.sum())
    if count == 0:
        raise ContractError("loss needs at least one valid target")
    tape = probs.tape
    p = clip(probs, PROB_FLOOR, 1.0 - PROB_FLOOR)
    y = tape.constant(labels.astype(np.float64))
    log_likelihood = y * log(p) + (1.0 - y) * log(1.0 - p)
    return affine(reduce_sum(log_likelihood * tape.constant(weights)), -1.0 / count)


def dkt_loss(trace: PredictionTrace) -> Node:
    """Masked next-step BCE: position 0 has no history and is never a target"""
    batch = trace.batch
    return masked_bce(trace.probs, batch.labels, batch.target_weights())


def waviness(trace: PredictionTrace) -> tuple:
    """(w1, w2 squared) over valid adjacent output pairs, each normalized by Q"""
    if trace.outputs is None:
        raise ContractError("waviness needs the per-step output vectors of a DKT trace")
    batch = trace.batch
    q, length = batch.num_skills, batch.length
    pair_mask = batch.mask[:, 1:].astype(np.float64)
    pairs = float(pair_mask.sum())
    if pairs == 0:
        return None, None
    tape = trace.outputs.tape
    diff = slice_cols(trace.outputs, q, length * q) - slice_cols(trace.outputs, 0, (length - 1) * q)
    weights = tape.constant(np.repeat(pair_mask, q, axis=1))
    scale = 1.0 / (pairs * q)
    w1 = affine(reduce_sum(elementwise("abs", diff) * weights), scale)
    w2 = affine(reduce_sum(diff * diff * weights), scale)
    return w1, w2


def dkt_plus_loss(trace: PredictionTrace, config: DktPlusConfig) -> Node:
    """
    L + lambda_r * r + lambda_w1 * w1 + lambda_w2 * w2^2

    r is the BCE of y_t[skill_t] against label_t over every valid t. Terms whose
    weight is zero are not built, so all-zero weights give exactly dkt_loss.
    """
    loss = dkt_loss(trace)
    batch = trace.batch
    if config.lambda_r > 0:
        if trace.current is None:
            raise ContractError("reconstruction term needs current-skill outputs")
        r = masked_bce(trace.current, batch.labels, batch.mask.astype(np.float64))
        loss = loss + affine(r, config.lambda_r)
    if config.lambda_w1 > 0 or config.lambda_w2 > 0:
        w1, w2 = waviness(trace)
        if w1 is not None:
            if config.lambda_w1 > 0:
                loss = loss + affine(w1, config.lambda_w1)
            if config.lambda_w2 > 0:
                loss = loss + affine(w2, config.lambda_w2)
    return loss
