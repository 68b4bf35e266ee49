"""
Pydantic schemas for run configuration files

A run config is a YAML document with optional sections synth, data, model,
train and eval. Unknown keys anywhere are rejected.
"""
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

import yaml
from pydantic import BaseModel, Field, ValidationError, validator

from errors import ConfigError


ARCHITECTURES = ("dkt", "dkt+", "dkvmn", "sakt", "kqn")
DISPLAY_NAMES = {"dkt": "DKT", "dkt+": "DKT+", "dkvmn": "DKVMN", "sakt": "SAKT", "kqn": "KQN"}

COE_DEPARTMENTS = ["CEE", "CHE", "CSC", "ECE", "MCE"]


class StrictModel(BaseModel):
    class Config:
        extra = "forbid"


class RecordsPerStudent(StrictModel):
    """Uniform integer distribution of interactions per student"""
    min: int = Field(default=20, ge=1)
    max: int = Field(default=60, ge=1)

    @validator("max")
    def validate_range(cls, v, values):
        if "min" in values and v < values["min"]:
            raise ValueError("max must be >= min")
        return v


class DepartmentWeight(StrictModel):
    code: str
    college: str
    weight: float = Field(..., ge=0.0)


def _default_department_mix() -> List[DepartmentWeight]:
    mix = [DepartmentWeight(code=code, college="COE", weight=0.08) for code in COE_DEPARTMENTS]
    mix += [
        DepartmentWeight(code="BIO", college="COAS", weight=0.10),
        DepartmentWeight(code="CHM", college="COAS", weight=0.10),
        DepartmentWeight(code="MTH", college="COAS", weight=0.10),
        DepartmentWeight(code="ACC", college="COB", weight=0.15),
        DepartmentWeight(code="NUR", college="CON", weight=0.15),
    ]
    return mix


class SynthConfig(StrictModel):
    """Synthetic corpus generator settings"""
    n_students: int = Field(default=2000, ge=0)
    n_skills: int = Field(default=50, ge=2)
    records_per_student: RecordsPerStudent = Field(default_factory=RecordsPerStudent)
    years: List[int] = Field(default_factory=lambda: [2020, 2021, 2022, 2023])
    target_pass_rate: float = Field(default=0.8, gt=0.0, lt=1.0)
    difficulty_spread: float = Field(default=1.0, ge=0.0)
    ability_spread: float = Field(default=1.5, ge=0.0, description="sigma of the general per-student ability")
    cluster_ability_spread: float = Field(default=0.5, ge=0.0, description="sigma of per-subject deviations")
    discrimination_spread: float = Field(default=0.3, ge=0.0, description="log-normal sigma of a_k")
    learning_rate_gain: float = Field(default=0.15, ge=0.0)
    department_mix: List[DepartmentWeight] = Field(default_factory=_default_department_mix)
    clean_noise: float = Field(default=0.0735, ge=0.0, lt=1.0, description="share of I/NG rows in the output")
    intercept_bound: float = Field(default=12.0, gt=0.0)
    bisection_steps: int = Field(default=200, ge=1)
    seed: Optional[int] = None

    @validator("years")
    def validate_years(cls, v):
        if not v:
            raise ValueError("years must not be empty")
        if any(b - a != 1 for a, b in zip(v, v[1:])):
            raise ValueError("years must be consecutive and ascending")
        return v

    @validator("department_mix")
    def validate_mix(cls, v):
        if not v:
            raise ValueError("department_mix must not be empty")
        total = sum(d.weight for d in v)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"department weights must sum to 1, got {total}")
        return v


class DataConfig(StrictModel):
    boundary_year: Optional[int] = Field(default=None, description="first test year; defaults to the last year")
    missing_metadata: Literal["exclude", "include", "error"] = "exclude"
    train_colleges: Optional[List[str]] = Field(default=None, description="training scope, e.g. [COE, COAS]")


class DktPlusConfig(StrictModel):
    lambda_r: float = Field(default=0.10, ge=0.0)
    lambda_w1: float = Field(default=0.003, ge=0.0)
    lambda_w2: float = Field(default=3.0, ge=0.0)


class ModelConfig(StrictModel):
    architecture: str = "dkt"
    hidden_size: int = Field(default=100, ge=1)
    dkt_plus: DktPlusConfig = Field(default_factory=DktPlusConfig)
    dkvmn_slots: int = Field(default=20, ge=1)
    dkvmn_key_dim: int = Field(default=50, ge=1)
    dkvmn_value_dim: int = Field(default=100, ge=1)
    dkvmn_summary_dim: int = Field(default=50, ge=1)
    sakt_dim: int = Field(default=64, ge=1)
    sakt_heads: int = Field(default=4, ge=1)
    sakt_dropout: float = Field(default=0.0, ge=0.0, lt=1.0)
    sakt_max_len: int = Field(default=100, ge=2)
    kqn_dim: int = Field(default=64, ge=1)
    kqn_cell: Literal["rnn", "gru"] = "rnn"

    @validator("architecture")
    def validate_architecture(cls, v):
        tag = v.lower()
        if tag not in ARCHITECTURES:
            raise ValueError(f"architecture must be one of {list(ARCHITECTURES)}")
        return tag

    @validator("sakt_heads")
    def validate_heads(cls, v, values):
        if "sakt_dim" in values and values["sakt_dim"] % v:
            raise ValueError("sakt_heads must divide sakt_dim")
        return v


class TrainConfig(StrictModel):
    batch_size: int = Field(default=256, ge=1)
    epochs: int = Field(default=100, ge=0)
    learning_rate: float = Field(default=0.001, gt=0.0)
    optimizer: Literal["adam", "sgd"] = "adam"
    max_seq_len: int = Field(default=100, ge=2)
    seed: Optional[int] = None
    adam_beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(default=1e-8, gt=0.0)
    gradient_clip_norm: Optional[float] = Field(default=5.0, gt=0.0)
    log_val_auc: bool = False


class SubsetSpec(StrictModel):
    label: str
    departments: Optional[List[str]] = Field(default=None, description="None selects every test student")


def _default_subsets() -> List[SubsetSpec]:
    return [SubsetSpec(label=code, departments=[code]) for code in COE_DEPARTMENTS]


class EvalConfig(StrictModel):
    subsets: List[SubsetSpec] = Field(default_factory=_default_subsets)
    threshold: float = Field(default=0.5, ge=0.0)


class RunConfig(StrictModel):
    seed: int = 42
    synth: SynthConfig = Field(default_factory=SynthConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    def resolved(self, seed: Optional[int] = None) -> "RunConfig":
        """Copy with every section seed filled in from the run seed"""
        if seed is not None:
            run_seed = synth_seed = train_seed = seed
        else:
            run_seed = self.seed
            synth_seed = run_seed if self.synth.seed is None else self.synth.seed
            train_seed = run_seed if self.train.seed is None else self.train.seed
        synth = self.synth.model_copy(update={"seed": synth_seed})
        train = self.train.model_copy(update={"seed": train_seed})
        return self.model_copy(update={"seed": run_seed, "synth": synth, "train": train})


def _validation_message(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err.get("loc", ()))
        parts.append(f"{loc}: {err.get('msg')}")
    return "; ".join(parts)


def parse_run_config(raw: Optional[Dict[str, Any]]) -> RunConfig:
    try:
        return RunConfig(**(raw or {}))
    except ValidationError as e:
        raise ConfigError(f"invalid config: {_validation_message(e)}") from e


def load_run_config(path: Optional[Path]) -> RunConfig:
    """Read a YAML run config; no path means all defaults"""
    if path is None:
        return RunConfig()
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path} must contain a mapping of sections")
    return parse_run_config(raw)


def write_resolved_config(config: RunConfig, out_dir: Path, provenance: Optional[Dict[str, Any]] = None) -> Path:
    """Snapshot the resolved config (plus provenance) beside a command's outputs"""
    out_dir.mkdir(parents=True, exist_ok=True)
    document: Dict[str, Any] = config.model_dump(mode="json")
    if provenance:
        document["provenance"] = provenance
    path = out_dir / "resolved_config.yaml"
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(document, f, sort_keys=True)
    return path


def read_resolved_config(run_dir: Path) -> RunConfig:
    path = run_dir / "resolved_config.yaml"
    if not path.exists():
        raise ConfigError(f"{run_dir} has no resolved_config.yaml")
    raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    raw.pop("provenance", None)
    return parse_run_config(raw)
