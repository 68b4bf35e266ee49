"""
Deep Knowledge Tracing
Plain tanh recurrence over one-hot interactions with a sigmoid read-out over all skills

    h_t = tanh(W_hx x_t + W_hh h_{t-1} + b_h)
    y_t = sigmoid(W_yh h_t + b_y)

The prediction for interaction t reads component skill_t of y_{t-1}; y_{-1} is
the read-out of the zero state. DKT+ shares this forward pass.
"""
import logging
from typing import List, Optional

import numpy as np

from schemas import ModelConfig
from services.core_math import (
    ComputeTape,
    Node,
    concat,
    expand,
    reduce_sum,
    reshape,
    sigmoid,
    tanh,
)
from services.model_types import ModelState, ParamSpec, PredictionTrace, WindowBatch

logger = logging.getLogger(__name__)


def parameter_specs(num_skills: int, config: ModelConfig) -> List[ParamSpec]:
    h, q = config.hidden_size, num_skills
    return [
        ParamSpec("W_hx", (h, 2 * q), fan_in=2 * q),
        ParamSpec("W_hh", (h, h), fan_in=h),
        ParamSpec("b_h", (1, h), init="zeros"),
        ParamSpec("W_yh", (q, h), fan_in=h),
        ParamSpec("b_y", (1, q), init="zeros"),
    ]


def _one_hot_inputs(batch: WindowBatch) -> np.ndarray:
    """B x T x 2Q one-hot interaction vectors"""
    index = batch.interaction_index()
    out = np.zeros((batch.size, batch.length, 2 * batch.num_skills))
    rows, steps = np.indices(index.shape)
    out[rows, steps, index] = 1.0
    return out


def dkt_forward(
    tape: ComputeTape,
    state: ModelState,
    batch: WindowBatch,
    rng: Optional[np.random.Generator] = None,
) -> PredictionTrace:
    size, length, q = batch.size, batch.length, batch.num_skills
    hidden = state.config.hidden_size
    W_hx_T = tape.watch(state["W_hx"]).T
    W_hh_T = tape.watch(state["W_hh"]).T
    W_yh_T = tape.watch(state["W_yh"]).T
    b_h = expand(tape.watch(state["b_h"]), size, hidden)
    b_y = expand(tape.watch(state["b_y"]), size, q)

    inputs = _one_hot_inputs(batch)
    h: Optional[Node] = None
    y_prev = sigmoid(b_y)
    history: List[Node] = [y_prev]
    outputs: List[Node] = []
    for t in range(length):
        pre = tape.constant(inputs[:, t, :]) @ W_hx_T + b_h
        if h is not None:
            pre = pre + h @ W_hh_T
        h = tanh(pre)
        y = sigmoid(h @ W_yh_T + b_y)
        outputs.append(y)
        history.append(y)

    one_hot = tape.constant(batch.skill_one_hot())
    prior = concat(history[:-1], axis=1)          # y_{t-1} for every t
    after = concat(outputs, axis=1)               # y_t for every t
    probs = reshape(reduce_sum(reshape(prior, size * length, q) * one_hot, axis=1), size, length)
    current = reshape(reduce_sum(reshape(after, size * length, q) * one_hot, axis=1), size, length)
    return PredictionTrace(probs=probs, batch=batch, outputs=after, current=current)
