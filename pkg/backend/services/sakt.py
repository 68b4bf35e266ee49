"""
Self-Attentive Knowledge Tracing

One attention block. The query for position t is the embedding of skill_t; keys
and values are embedded interactions 0..t-1 plus their positions, so attention
is strictly causal. Position 0 has no history and gets a zero attention output.

    A   = softmax(Q K^T / sqrt(d_head) + causal_mask) V     (per head)
    x   = LN(A W_o + query)
    out = LN(FFN(x) + x)
    p   = sigmoid(out w_out + b_out)
"""
import logging
import math
from typing import List, Optional

import numpy as np

from errors import WindowError
from schemas import ModelConfig
from services.core_math import (
    ComputeTape,
    Node,
    concat,
    dropout,
    expand,
    gather_rows,
    layer_norm,
    relu,
    reshape,
    sigmoid,
    slice_cols,
    slice_rows,
    softmax,
)
from services.model_types import ModelState, ParamSpec, PredictionTrace, WindowBatch

logger = logging.getLogger(__name__)

MASKED = -1e30


def parameter_specs(num_skills: int, config: ModelConfig) -> List[ParamSpec]:
    q, d, length = num_skills, config.sakt_dim, config.sakt_max_len
    return [
        ParamSpec("interaction_embedding", (2 * q, d), fan_in=d),
        ParamSpec("skill_embedding", (q, d), fan_in=d),
        ParamSpec("position_embedding", (length, d), fan_in=d),
        ParamSpec("W_query", (d, d), fan_in=d),
        ParamSpec("W_key", (d, d), fan_in=d),
        ParamSpec("W_value", (d, d), fan_in=d),
        ParamSpec("W_attn_out", (d, d), fan_in=d),
        ParamSpec("ln1_gamma", (1, d), init="ones"),
        ParamSpec("ln1_beta", (1, d), init="zeros"),
        ParamSpec("W_ffn1", (d, d), fan_in=d),
        ParamSpec("b_ffn1", (1, d), init="zeros"),
        ParamSpec("W_ffn2", (d, d), fan_in=d),
        ParamSpec("b_ffn2", (1, d), init="zeros"),
        ParamSpec("ln2_gamma", (1, d), init="ones"),
        ParamSpec("ln2_beta", (1, d), init="zeros"),
        ParamSpec("w_out", (d, 1), fan_in=d),
        ParamSpec("b_out", (1, 1), init="zeros"),
    ]


def causal_mask(length: int) -> np.ndarray:
    """(length-1) x (length-1) additive mask: query row r (position r+1) sees keys 0..r"""
    size = max(length - 1, 0)
    mask = np.full((size, size), MASKED)
    mask[np.tril_indices(size)] = 0.0
    return mask


def sakt_forward(
    tape: ComputeTape,
    state: ModelState,
    batch: WindowBatch,
    rng: Optional[np.random.Generator] = None,
) -> PredictionTrace:
    cfg = state.config
    size, length = batch.size, batch.length
    d, heads = cfg.sakt_dim, cfg.sakt_heads
    d_head = d // heads
    if length > cfg.sakt_max_len:
        raise WindowError(f"window length {length} exceeds the positional table of {cfg.sakt_max_len}")
    rows = size * length

    positions = np.tile(np.arange(length), size)
    keys_in = gather_rows(tape.watch(state["interaction_embedding"]), batch.interaction_index().reshape(-1))
    keys_in = keys_in + gather_rows(tape.watch(state["position_embedding"]), positions)
    query_in = gather_rows(tape.watch(state["skill_embedding"]), batch.skill_ids.reshape(-1) - 1)

    queries = query_in @ tape.watch(state["W_query"])
    keys = keys_in @ tape.watch(state["W_key"])
    values = keys_in @ tape.watch(state["W_value"])

    scale = 1.0 / math.sqrt(d_head)
    mask = tape.constant(causal_mask(length)) if length > 1 else None
    zero_row = tape.constant(np.zeros((1, d)))
    attended: List[Node] = []
    for b in range(size):
        start = b * length
        attended.append(zero_row)
        if length == 1:
            continue
        q_b = slice_rows(queries, start + 1, start + length)
        k_b = slice_rows(keys, start, start + length - 1)
        v_b = slice_rows(values, start, start + length - 1)
        head_outputs = []
        for h in range(heads):
            lo, hi = h * d_head, (h + 1) * d_head
            scores = (slice_cols(q_b, lo, hi) @ slice_cols(k_b, lo, hi).T) * scale + mask
            weights = dropout(softmax(scores, axis=1), cfg.sakt_dropout, rng)
            head_outputs.append(weights @ slice_cols(v_b, lo, hi))
        attended.append(concat(head_outputs, axis=1) if heads > 1 else head_outputs[0])
    attention = concat(attended, axis=0) @ tape.watch(state["W_attn_out"])

    x = layer_norm(
        dropout(attention, cfg.sakt_dropout, rng) + query_in,
        tape.watch(state["ln1_gamma"]),
        tape.watch(state["ln1_beta"]),
    )
    hidden = relu(x @ tape.watch(state["W_ffn1"]) + expand(tape.watch(state["b_ffn1"]), rows, d))
    ffn = hidden @ tape.watch(state["W_ffn2"]) + expand(tape.watch(state["b_ffn2"]), rows, d)
    out = layer_norm(
        dropout(ffn, cfg.sakt_dropout, rng) + x,
        tape.watch(state["ln2_gamma"]),
        tape.watch(state["ln2_beta"]),
    )
    logits = out @ tape.watch(state["w_out"]) + expand(tape.watch(state["b_out"]), rows, 1)
    return PredictionTrace(probs=reshape(sigmoid(logits), size, length), batch=batch)


def attention_weights(state: ModelState, batch: WindowBatch, row: int = 0, head: int = 0) -> np.ndarray:
    """Causal attention of one batch row and head, (T-1) x (T-1), for inspection"""
    cfg = state.config
    tape = ComputeTape(record=False)
    length = batch.length
    d_head = cfg.sakt_dim // cfg.sakt_heads
    positions = np.arange(length)
    keys_in = gather_rows(tape.watch(state["interaction_embedding"]), batch.interaction_index()[row])
    keys_in = keys_in + gather_rows(tape.watch(state["position_embedding"]), positions)
    query_in = gather_rows(tape.watch(state["skill_embedding"]), batch.skill_ids[row] - 1)
    q = slice_rows(query_in @ tape.watch(state["W_query"]), 1, length)
    k = slice_rows(keys_in @ tape.watch(state["W_key"]), 0, length - 1)
    lo, hi = head * d_head, (head + 1) * d_head
    scores = (slice_cols(q, lo, hi) @ slice_cols(k, lo, hi).T) * (1.0 / math.sqrt(d_head))
    return softmax(scores + tape.constant(causal_mask(length)), axis=1).numpy()
