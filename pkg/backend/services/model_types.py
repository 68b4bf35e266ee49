"""
Shared model types: encoded windows, padded batches, parameter state and prediction traces
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import EncodingError
from schemas import ModelConfig
from services.core_math import Matrix, Node, Parameter
from services.data_pipeline import StudentSequence


def encode_interaction(skill_id: int, correct: int, num_skills: int) -> int:
    """Interaction index in 1..2Q: skill_id + correct * Q"""
    if not 1 <= skill_id <= num_skills:
        raise EncodingError(f"skill id {skill_id} outside 1..{num_skills}")
    if correct not in (0, 1):
        raise EncodingError(f"correctness must be 0 or 1, got {correct}")
    return skill_id + correct * num_skills


@dataclass(frozen=True)
class EncodedWindow:
    skill_ids: Tuple[int, ...]
    labels: Tuple[int, ...]
    valid_mask: Tuple[int, ...]

    def __len__(self) -> int:
        return len(self.skill_ids)

    @classmethod
    def from_sequence(cls, sequence: StudentSequence, num_skills: int) -> "EncodedWindow":
        for it in sequence.interactions:
            encode_interaction(it.skill_id, it.correct, num_skills)
        return cls(
            skill_ids=tuple(it.skill_id for it in sequence.interactions),
            labels=tuple(it.correct for it in sequence.interactions),
            valid_mask=(1,) * len(sequence),
        )


@dataclass
class WindowBatch:
    """B windows padded to a common length T (skill 1, label 0, mask 0)"""
    skill_ids: np.ndarray   # B x T, 1-based
    labels: np.ndarray      # B x T
    mask: np.ndarray        # B x T
    num_skills: int

    @property
    def size(self) -> int:
        return self.skill_ids.shape[0]

    @property
    def length(self) -> int:
        return self.skill_ids.shape[1]

    def interaction_index(self) -> np.ndarray:
        """0-based interaction index (encode_interaction - 1) per position"""
        return (self.skill_ids - 1) + self.labels.astype(np.int64) * self.num_skills

    def skill_one_hot(self) -> np.ndarray:
        """(B*T) x Q one-hot of the skill at each position, row b*T + t"""
        out = np.zeros((self.skill_ids.size, self.num_skills))
        out[np.arange(self.skill_ids.size), self.skill_ids.reshape(-1) - 1] = 1.0
        return out

    def target_weights(self) -> np.ndarray:
        """Mask of scored next-step targets: valid positions after the first"""
        weights = self.mask.astype(np.float64).copy()
        weights[:, 0] = 0.0
        return weights

    @classmethod
    def from_windows(cls, windows: Sequence[EncodedWindow], num_skills: int) -> "WindowBatch":
        if not windows:
            raise EncodingError("cannot batch zero windows")
        length = max(len(w) for w in windows)
        skills = np.ones((len(windows), length), dtype=np.int64)
        labels = np.zeros((len(windows), length), dtype=np.int64)
        mask = np.zeros((len(windows), length), dtype=np.int64)
        for b, w in enumerate(windows):
            n = len(w)
            skills[b, :n] = w.skill_ids
            labels[b, :n] = w.labels
            mask[b, :n] = w.valid_mask
        return cls(skill_ids=skills, labels=labels, mask=mask, num_skills=num_skills)

    @classmethod
    def from_sequences(cls, sequences: Sequence[StudentSequence], num_skills: int) -> "WindowBatch":
        return cls.from_windows([EncodedWindow.from_sequence(s, num_skills) for s in sequences], num_skills)


@dataclass
class PredictionTrace:
    """
    Probabilities for every position of a batch

    probs[b, t] is the predicted pass probability of interaction t given
    interactions < t. DKT-family traces also keep the full output vectors y_t
    (outputs, B x T*Q, y_t after interaction t) and y_t[skill_t] (current).
    """
    probs: Node
    batch: WindowBatch
    outputs: Optional[Node] = None
    current: Optional[Node] = None

    def numpy(self) -> np.ndarray:
        return self.probs.numpy()


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: Tuple[int, int]
    init: str = "uniform"   # uniform | zeros | ones
    fan_in: int = 1


@dataclass
class ModelState:
    """Architecture tag plus its named tensors in declaration order"""
    architecture: str
    num_skills: int
    config: ModelConfig
    params: Dict[str, Parameter] = field(default_factory=dict)

    def parameters(self) -> List[Parameter]:
        return list(self.params.values())

    def __getitem__(self, name: str) -> Parameter:
        return self.params[name]

    def copy(self) -> "ModelState":
        return ModelState(
            architecture=self.architecture,
            num_skills=self.num_skills,
            config=self.config,
            params={n: Parameter(n, Matrix.wrap(p.value.data.copy())) for n, p in self.params.items()},
        )
