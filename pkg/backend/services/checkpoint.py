"""
Checkpoint Service
Binary container for trained models

Layout:
    header   struct "<8sHH16sQ": magic, format version, header flags (0),
             architecture tag (NUL padded), manifest byte length
    manifest UTF-8 YAML: tensor names and shapes, vocabulary, model and train
             config snapshots, final epoch
    payload  every tensor as little-endian float64, row-major, manifest order
"""
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import yaml

from errors import CheckpointError
from schemas import ModelConfig, TrainConfig
from services.core_math import Matrix, Parameter
from services.data_pipeline import SkillVocabulary
from services.model_registry import parameter_specs
from services.model_types import ModelState

logger = logging.getLogger(__name__)

MAGIC = b"KTCKPT\x00\x00"
FORMAT_VERSION = 1
HEADER = struct.Struct("<8sHH16sQ")


@dataclass
class CheckpointInfo:
    architecture: str
    vocabulary: SkillVocabulary
    train_config: Optional[TrainConfig] = None
    final_epoch: int = 0
    tensors: List[Tuple[str, Tuple[int, int]]] = field(default_factory=list)


def save_checkpoint(
    path: Path,
    state: ModelState,
    vocabulary: SkillVocabulary,
    train_config: Optional[TrainConfig] = None,
    final_epoch: int = 0,
) -> Path:
    """Write state and its provenance; bytes depend only on the inputs"""
    if len(vocabulary) != state.num_skills:
        raise CheckpointError(
            f"model has {state.num_skills} skills but the vocabulary has {len(vocabulary)}"
        )
    manifest: Dict[str, Any] = {
        "architecture": state.architecture,
        "num_skills": state.num_skills,
        "vocabulary": [[s, l] for s, l in vocabulary.pairs],
        "model_config": state.config.model_dump(mode="json"),
        "train_config": train_config.model_dump(mode="json") if train_config else None,
        "final_epoch": final_epoch,
        "tensors": [{"name": p.name, "shape": list(p.shape)} for p in state.parameters()],
    }
    body = yaml.safe_dump(manifest, sort_keys=True).encode("utf-8")
    tag = state.architecture.encode("ascii")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(HEADER.pack(MAGIC, FORMAT_VERSION, 0, tag, len(body)))
        f.write(body)
        for p in state.parameters():
            f.write(np.ascontiguousarray(p.value.data, dtype="<f8").tobytes())
    logger.info(f"Saved {state.architecture} checkpoint to {path}")
    return path


def load_checkpoint(
    path: Path,
    expected_vocabulary: Optional[SkillVocabulary] = None,
) -> Tuple[ModelState, CheckpointInfo]:
    """
    Read a checkpoint and rebuild its ModelState

    Args:
        path: checkpoint file
        expected_vocabulary: vocabulary of the data it will be used with

    Returns:
        (state, info)

    Raises:
        CheckpointError: unreadable file, wrong magic or version, tensor
            mismatch, or a vocabulary size different from the data's
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if len(raw) < HEADER.size:
        raise CheckpointError(f"{path} is too short to be a checkpoint")
    magic, version, _flags, tag, manifest_len = HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    architecture = tag.rstrip(b"\x00").decode("ascii")

    offset = HEADER.size
    try:
        manifest = yaml.safe_load(raw[offset:offset + manifest_len].decode("utf-8"))
    except (UnicodeDecodeError, yaml.YAMLError) as e:
        raise CheckpointError(f"corrupt checkpoint manifest in {path}: {e}") from e
    offset += manifest_len
    if manifest.get("architecture") != architecture:
        raise CheckpointError(f"header architecture {architecture!r} disagrees with the manifest")

    vocabulary = SkillVocabulary(tuple(pair) for pair in manifest["vocabulary"])
    if expected_vocabulary is not None and len(expected_vocabulary) != len(vocabulary):
        raise CheckpointError(
            f"vocabulary size mismatch: checkpoint has {len(vocabulary)} skills, data has {len(expected_vocabulary)}"
        )
    if expected_vocabulary is not None and expected_vocabulary != vocabulary:
        logger.warning("Checkpoint vocabulary pairs differ from the data vocabulary of the same size")

    config = ModelConfig(**manifest["model_config"])
    num_skills = int(manifest["num_skills"])
    expected = [(s.name, s.shape) for s in parameter_specs(architecture, num_skills, config)]
    stored = [(t["name"], tuple(t["shape"])) for t in manifest["tensors"]]
    if stored != expected:
        raise CheckpointError(f"tensor layout in {path} does not match the {architecture} architecture")

    params: Dict[str, Parameter] = {}
    for name, (rows, cols) in stored:
        size = rows * cols * 8
        if offset + size > len(raw):
            raise CheckpointError(f"{path} is truncated inside tensor {name}")
        arr = np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=offset).astype(np.float64)
        params[name] = Parameter(name, Matrix.wrap(arr.reshape(rows, cols)))
        offset += size
    if offset != len(raw):
        raise CheckpointError(f"{path} has {len(raw) - offset} trailing bytes")

    train_config = TrainConfig(**manifest["train_config"]) if manifest.get("train_config") else None
    state = ModelState(architecture=architecture, num_skills=num_skills, config=config, params=params)
    info = CheckpointInfo(
        architecture=architecture,
        vocabulary=vocabulary,
        train_config=train_config,
        final_epoch=int(manifest.get("final_epoch", 0)),
        tensors=stored,
    )
    return state, info
