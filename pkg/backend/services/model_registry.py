"""
Model Registry
Initialization, dispatch and loss selection for the five architectures
"""
import logging
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from errors import ConfigError
from schemas import ARCHITECTURES, ModelConfig
from services import dkt, dkvmn, kqn, sakt
from services.core_math import ComputeTape, Matrix, Node, Parameter
from services.data_pipeline import StudentSequence
from services.losses import dkt_loss, dkt_plus_loss
from services.model_types import (
    EncodedWindow,
    ModelState,
    ParamSpec,
    PredictionTrace,
    WindowBatch,
    encode_interaction,
)

logger = logging.getLogger(__name__)

__all__ = [
    "EncodedWindow",
    "ModelState",
    "PredictionTrace",
    "WindowBatch",
    "encode_interaction",
    "forward",
    "init_model",
    "model_loss",
    "model_predict",
    "parameter_specs",
    "predict_windows",
]

Forward = Callable[[ComputeTape, ModelState, WindowBatch, Optional[np.random.Generator]], PredictionTrace]

FORWARDS: Dict[str, Forward] = {
    "dkt": dkt.dkt_forward,
    "dkt+": dkt.dkt_forward,
    "dkvmn": dkvmn.dkvmn_forward,
    "sakt": sakt.sakt_forward,
    "kqn": kqn.kqn_forward,
}

SPECS = {
    "dkt": dkt.parameter_specs,
    "dkt+": dkt.parameter_specs,
    "dkvmn": dkvmn.parameter_specs,
    "sakt": sakt.parameter_specs,
    "kqn": kqn.parameter_specs,
}


def _check_architecture(architecture: str) -> str:
    tag = architecture.lower()
    if tag not in ARCHITECTURES:
        raise ConfigError(f"unknown architecture {architecture!r}; expected one of {list(ARCHITECTURES)}")
    return tag


def parameter_specs(architecture: str, num_skills: int, config: ModelConfig) -> List[ParamSpec]:
    return SPECS[_check_architecture(architecture)](num_skills, config)


def init_model(architecture: str, num_skills: int, config: ModelConfig, seed: int) -> ModelState:
    """
    Fresh parameters: uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) in declaration order, biases zero

    Args:
        architecture: dkt | dkt+ | dkvmn | sakt | kqn
        num_skills: vocabulary size Q
        config: model hyperparameters
        seed: initialization seed

    Returns:
        ModelState with every tensor allocated
    """
    tag = _check_architecture(architecture)
    if num_skills < 1:
        raise ConfigError(f"num_skills must be positive, got {num_skills}")
    rng = np.random.default_rng(seed)
    params: Dict[str, Parameter] = {}
    for spec in parameter_specs(tag, num_skills, config):
        if spec.init == "zeros":
            value = np.zeros(spec.shape)
        elif spec.init == "ones":
            value = np.ones(spec.shape)
        else:
            bound = 1.0 / np.sqrt(spec.fan_in)
            value = rng.uniform(-bound, bound, size=spec.shape)
        params[spec.name] = Parameter(spec.name, Matrix.wrap(value))
    total = sum(p.value.rows * p.value.cols for p in params.values())
    logger.info(f"Initialized {tag} with {len(params)} tensors ({total} weights) for {num_skills} skills")
    return ModelState(architecture=tag, num_skills=num_skills, config=config, params=params)


def forward(
    tape: ComputeTape,
    state: ModelState,
    batch: WindowBatch,
    rng: Optional[np.random.Generator] = None,
) -> PredictionTrace:
    return FORWARDS[_check_architecture(state.architecture)](tape, state, batch, rng)


def model_loss(trace: PredictionTrace, state: ModelState) -> Node:
    if state.architecture == "dkt+":
        return dkt_plus_loss(trace, state.config.dkt_plus)
    return dkt_loss(trace)


def model_predict(state: ModelState, window) -> PredictionTrace:
    """Inference on one window (an EncodedWindow or a StudentSequence)"""
    if isinstance(window, StudentSequence):
        window = EncodedWindow.from_sequence(window, state.num_skills)
    batch = WindowBatch.from_windows([window], state.num_skills)
    return forward(ComputeTape(record=False), state, batch)


def predict_windows(
    state: ModelState,
    windows: Sequence[StudentSequence],
    batch_size: int = 256,
) -> List[np.ndarray]:
    """Probabilities for every position of every window, in input order"""
    results: List[np.ndarray] = []
    for start in range(0, len(windows), batch_size):
        chunk = windows[start:start + batch_size]
        batch = WindowBatch.from_sequences(chunk, state.num_skills)
        probs = forward(ComputeTape(record=False), state, batch).numpy()
        results.extend(probs[b, :len(w)].copy() for b, w in enumerate(chunk))
    return results
