"""
Knowledge Query Network

A recurrent knowledge encoder turns interactions into a knowledge state h_t and
a feed-forward skill encoder maps a skill to a query vector q of the same size.
The pass probability of interaction t is sigmoid(h_{t-1} . q(skill_t)) with
h_{-1} = 0, so the first position of a window always predicts 0.5.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy.spatial.distance import cdist

from schemas import ModelConfig
from services.core_math import (
    ComputeTape,
    Node,
    concat,
    expand,
    gather_rows,
    reduce_sum,
    sigmoid,
    tanh,
)
from services.model_types import ModelState, ParamSpec, PredictionTrace, WindowBatch

logger = logging.getLogger(__name__)


def parameter_specs(num_skills: int, config: ModelConfig) -> List[ParamSpec]:
    q, d = num_skills, config.kqn_dim
    specs = [
        ParamSpec("W_in", (2 * q, d), fan_in=2 * q),
        ParamSpec("W_rec", (d, d), fan_in=d),
        ParamSpec("b_rec", (1, d), init="zeros"),
    ]
    if config.kqn_cell == "gru":
        for gate in ("update", "reset"):
            specs += [
                ParamSpec(f"W_in_{gate}", (2 * q, d), fan_in=2 * q),
                ParamSpec(f"W_rec_{gate}", (d, d), fan_in=d),
                ParamSpec(f"b_{gate}", (1, d), init="zeros"),
            ]
    specs += [
        ParamSpec("W_skill_hidden", (q, d), fan_in=q),
        ParamSpec("b_skill_hidden", (1, d), init="zeros"),
        ParamSpec("W_skill_out", (d, d), fan_in=d),
        ParamSpec("b_skill_out", (1, d), init="zeros"),
    ]
    return specs


def _skill_vectors(tape: ComputeTape, state: ModelState, skill_ids: np.ndarray) -> Node:
    """Skill encoder on one-hot skills; one-hot times W is a row lookup"""
    rows = len(skill_ids)
    d = state.config.kqn_dim
    hidden = tanh(
        gather_rows(tape.watch(state["W_skill_hidden"]), skill_ids - 1)
        + expand(tape.watch(state["b_skill_hidden"]), rows, d)
    )
    return hidden @ tape.watch(state["W_skill_out"]) + expand(tape.watch(state["b_skill_out"]), rows, d)


def kqn_forward(
    tape: ComputeTape,
    state: ModelState,
    batch: WindowBatch,
    rng: Optional[np.random.Generator] = None,
) -> PredictionTrace:
    cfg = state.config
    size, length, d = batch.size, batch.length, cfg.kqn_dim
    gru = cfg.kqn_cell == "gru"

    W_in = tape.watch(state["W_in"])
    W_rec = tape.watch(state["W_rec"])
    b_rec = expand(tape.watch(state["b_rec"]), size, d)
    if gru:
        gates = {
            g: (
                tape.watch(state[f"W_in_{g}"]),
                tape.watch(state[f"W_rec_{g}"]),
                expand(tape.watch(state[f"b_{g}"]), size, d),
            )
            for g in ("update", "reset")
        }

    interaction_index = batch.interaction_index()
    queries = _skill_vectors(tape, state, batch.skill_ids.reshape(-1))
    h = tape.constant(np.zeros((size, d)))
    columns: List[Node] = []
    for t in range(length):
        # rows b*T + t of the query table
        q_t = gather_rows(queries, np.arange(size) * length + t)
        columns.append(sigmoid(reduce_sum(h * q_t, axis=1)))

        x = gather_rows(W_in, interaction_index[:, t])
        if gru:
            W_iu, W_ru, b_u = gates["update"]
            W_ir, W_rr, b_r = gates["reset"]
            z = sigmoid(gather_rows(W_iu, interaction_index[:, t]) + h @ W_ru + b_u)
            r = sigmoid(gather_rows(W_ir, interaction_index[:, t]) + h @ W_rr + b_r)
            candidate = tanh(x + (r * h) @ W_rec + b_rec)
            h = (1.0 - z) * candidate + z * h
        else:
            h = tanh(x + h @ W_rec + b_rec)

    return PredictionTrace(probs=concat(columns, axis=1), batch=batch)


@dataclass
class SkillSimilarity:
    """Q x Q tables; cosine entries are NaN where a skill vector has zero norm"""
    cosine: np.ndarray
    euclidean: np.ndarray
    missing: int = 0


def skill_vectors(state: ModelState) -> np.ndarray:
    tape = ComputeTape(record=False)
    return _skill_vectors(tape, state, np.arange(1, state.num_skills + 1)).numpy()


def skill_similarity(state: ModelState) -> SkillSimilarity:
    vectors = skill_vectors(state)
    norms = np.linalg.norm(vectors, axis=1)
    euclidean = cdist(vectors, vectors)

    zero = norms == 0
    safe = np.where(zero, 1.0, norms)
    unit = vectors / safe[:, None]
    cosine = np.clip(unit @ unit.T, -1.0, 1.0)
    cosine = 0.5 * (cosine + cosine.T)
    np.fill_diagonal(cosine, 1.0)
    cosine[zero, :] = np.nan
    cosine[:, zero] = np.nan
    if zero.any():
        logger.warning(f"{int(zero.sum())} skill vectors have zero norm; cosine similarity missing for them")
    return SkillSimilarity(cosine=cosine, euclidean=euclidean, missing=int(zero.sum()))
