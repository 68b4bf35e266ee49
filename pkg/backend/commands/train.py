"""
train: fit one architecture on a preprocessed split
"""
import argparse
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import pandas as pd

from commands import add_common_arguments, output_dir, resolve_config
from schemas import RunConfig, parse_run_config, write_resolved_config
from services.checkpoint import save_checkpoint
from services.data_pipeline import load_split
from services.kqn import skill_similarity
from services.model_registry import init_model
from services.training import TrainResult, train
from settings import Settings

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = "model.ckpt"


@dataclass
class TrainCommandResult:
    result: TrainResult
    files: Dict[str, Path] = field(default_factory=dict)


def write_skill_similarity(result: TrainResult, path: Path) -> Path:
    sim = skill_similarity(result.state)
    q = result.state.num_skills
    rows = [
        (a + 1, b + 1, sim.cosine[a, b], sim.euclidean[a, b])
        for a in range(q)
        for b in range(q)
    ]
    pd.DataFrame(rows, columns=["skill_a", "skill_b", "cosine", "euclidean"]).to_csv(
        path, index=False, float_format="%.17g"
    )
    return path


def cmd_train(
    data_dir: Path,
    out_dir: Path,
    config: RunConfig,
    architecture: Optional[str] = None,
) -> TrainCommandResult:
    """
    Train and write model.ckpt, history.csv and resolved_config.yaml

    Args:
        data_dir: output of preprocess
        out_dir: run directory
        config: resolved run config (train.seed set)
        architecture: overrides config.model.architecture

    Returns:
        TrainCommandResult with the trained state and written files
    """
    if architecture is not None:
        raw = config.model_dump()
        raw["model"]["architecture"] = architecture
        config = parse_run_config(raw)
    split = load_split(data_dir)
    state = init_model(config.model.architecture, split.num_skills, config.model, seed=config.train.seed)
    result = train(state, split, config.train)

    out_dir.mkdir(parents=True, exist_ok=True)
    files = {
        "checkpoint": save_checkpoint(
            out_dir / CHECKPOINT_FILE,
            result.state,
            split.vocabulary,
            train_config=config.train,
            final_epoch=len(result.history.epochs),
        ),
        "history": out_dir / "history.csv",
    }
    result.history.save(files["history"])
    if result.state.architecture == "kqn":
        files["skill_similarity"] = write_skill_similarity(result, out_dir / "skill_similarity.csv")

    provenance = {
        "data_dir": str(data_dir),
        "split": dict(split.provenance),
        "windows": result.windows,
        "skipped_windows": result.skipped_windows,
        "gradient_clip_norm": result.gradient_clip_norm,
    }
    files["resolved_config"] = write_resolved_config(config, out_dir, provenance)
    return TrainCommandResult(result=result, files=files)


def handle(args: argparse.Namespace, settings: Settings) -> int:
    config = resolve_config(args.config, args.seed, settings)
    out = output_dir(args.out, settings, "train")
    outcome = cmd_train(args.data, out, config, args.arch)
    losses = outcome.result.history.losses
    logger.info(
        f"Trained {outcome.result.state.architecture}: "
        + (f"loss {losses[0]:.4f} -> {losses[-1]:.4f}" if losses else "no epochs run")
        + f", checkpoint {outcome.files['checkpoint']}"
    )
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("train", help="train one architecture on a preprocessed split")
    parser.add_argument("data", type=Path, help="preprocessed data directory")
    parser.add_argument("--arch", default=None, help="dkt | dkt+ | dkvmn | sakt | kqn")
    add_common_arguments(parser)
    parser.set_defaults(handler=handle)
