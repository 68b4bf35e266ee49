"""
Dynamic Key-Value Memory Network

A static key memory addresses N slots; a per-window value memory is read to
predict and then written with erase-then-add:

    w     = softmax(k_t M_k^T)
    r     = sum_i w_i M_v[i]
    p     = sigmoid(w_out . tanh(W_f [r; k_t] + b_f) + b_out)
    M_v[i] <- M_v[i] * (1 - w_i e_t) + w_i a_t

Value memory is flattened to B x (N * d_v) so every slot update is a 2-D op.
"""
import logging
from typing import List, Optional

import numpy as np

from schemas import ModelConfig
from services.core_math import (
    ComputeTape,
    Node,
    batch_outer,
    batch_weighted_sum,
    concat,
    expand,
    gather_rows,
    reshape,
    sigmoid,
    softmax,
    tanh,
)
from services.model_types import ModelState, ParamSpec, PredictionTrace, WindowBatch

logger = logging.getLogger(__name__)


def parameter_specs(num_skills: int, config: ModelConfig) -> List[ParamSpec]:
    q = num_skills
    n, dk, dv, f = config.dkvmn_slots, config.dkvmn_key_dim, config.dkvmn_value_dim, config.dkvmn_summary_dim
    return [
        ParamSpec("key_memory", (n, dk), fan_in=dk),
        ParamSpec("value_memory_init", (n, dv), fan_in=dv),
        ParamSpec("skill_key", (q, dk), fan_in=dk),
        ParamSpec("interaction_value", (2 * q, dv), fan_in=dv),
        ParamSpec("W_erase", (dv, dv), fan_in=dv),
        ParamSpec("b_erase", (1, dv), init="zeros"),
        ParamSpec("W_add", (dv, dv), fan_in=dv),
        ParamSpec("b_add", (1, dv), init="zeros"),
        ParamSpec("W_summary", (dv + dk, f), fan_in=dv + dk),
        ParamSpec("b_summary", (1, f), init="zeros"),
        ParamSpec("w_out", (f, 1), fan_in=f),
        ParamSpec("b_out", (1, 1), init="zeros"),
    ]


def dkvmn_forward(
    tape: ComputeTape,
    state: ModelState,
    batch: WindowBatch,
    rng: Optional[np.random.Generator] = None,
) -> PredictionTrace:
    cfg = state.config
    size = batch.size
    n, dv, f = cfg.dkvmn_slots, cfg.dkvmn_value_dim, cfg.dkvmn_summary_dim

    key_memory_T = tape.watch(state["key_memory"]).T
    skill_key = tape.watch(state["skill_key"])
    interaction_value = tape.watch(state["interaction_value"])
    W_erase, W_add = tape.watch(state["W_erase"]), tape.watch(state["W_add"])
    b_erase = expand(tape.watch(state["b_erase"]), size, dv)
    b_add = expand(tape.watch(state["b_add"]), size, dv)
    W_summary = tape.watch(state["W_summary"])
    b_summary = expand(tape.watch(state["b_summary"]), size, f)
    w_out = tape.watch(state["w_out"])
    b_out = expand(tape.watch(state["b_out"]), size, 1)

    memory = expand(reshape(tape.watch(state["value_memory_init"]), 1, n * dv), size, n * dv)
    skill_index = batch.skill_ids - 1
    interaction_index = batch.interaction_index()

    columns: List[Node] = []
    for t in range(batch.length):
        k = gather_rows(skill_key, skill_index[:, t])
        w = softmax(k @ key_memory_T, axis=1)
        read = batch_weighted_sum(w, memory)
        summary = tanh(concat([read, k], axis=1) @ W_summary + b_summary)
        columns.append(sigmoid(summary @ w_out + b_out))

        v = gather_rows(interaction_value, interaction_index[:, t])
        erase = sigmoid(v @ W_erase + b_erase)
        add = tanh(v @ W_add + b_add)
        memory = memory * (1.0 - batch_outer(w, erase)) + batch_outer(w, add)

    return PredictionTrace(probs=concat(columns, axis=1), batch=batch)


def correlation_weights(state: ModelState, skill_ids: np.ndarray) -> np.ndarray:
    """Slot attention for each skill id (rows sum to 1)"""
    tape = ComputeTape(record=False)
    k = gather_rows(tape.watch(state["skill_key"]), np.asarray(skill_ids) - 1)
    return softmax(k @ tape.watch(state["key_memory"]).T, axis=1).numpy()
