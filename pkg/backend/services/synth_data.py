"""
Synthetic Corpus Service
Seeded generator of institution-shaped course records with known pass probabilities

Each interaction passes with probability
    sigmoid(c + a_k * (theta_{s,cluster(k)} - b_k) + gain * prior_attempts_on_cluster)
where c is a global intercept found by bisection so the expected pass rate hits
the configured target. Skill clusters are course subjects; theta_{s,c} is a general
student ability plus a per-subject deviation.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

from errors import CalibrationError
from schemas import SynthConfig
from services.core_math import stable_sigmoid
from services.data_pipeline import (
    REMOVABLE_GRADES,
    DatasetSplit,
    RawRecord,
    StudentInfo,
    StudentMetadata,
    clean,
)
from services.metrics import ScoredPrediction

logger = logging.getLogger(__name__)


SUBJECTS = [
    "ACCT", "BIOL", "CHEG", "CHEM", "CIVE", "COMM", "COMP", "CSCI", "ECON", "EDUC",
    "ELEG", "ENGL", "ENGR", "FINA", "GEOG", "HIST", "HLTH", "KINE", "MATH", "MCEG",
    "MGMT", "MKTG", "MUSI", "NURS", "PHIL", "PHYS", "POLS", "PSYC", "SOCG", "SPAN",
]
LEVELS = (1000, 2000, 3000, 4000)

PASS_LETTERS = ["A", "B", "C", "CR"]
FAIL_LETTERS = ["D", "F", "W", "NC"]
LETTER_WEIGHTS = [0.35, 0.35, 0.25, 0.05]


@dataclass
class GroundTruth:
    """Generator parameters plus the Bernoulli parameter of every emitted interaction"""
    abilities: np.ndarray          # students x clusters
    difficulty: np.ndarray         # per skill
    discrimination: np.ndarray     # per skill, > 0
    intercept: float
    interactions: pd.DataFrame     # universal_id, step, academic_year, course_subject, course_level, probability, correct

    def probabilities_by_student(self) -> Dict[str, List[float]]:
        grouped: Dict[str, List[float]] = {}
        for uid, prob in zip(self.interactions["universal_id"], self.interactions["probability"]):
            grouped.setdefault(uid, []).append(float(prob))
        return grouped


@dataclass
class Bookkeeping:
    """Counters kept while generating, for recount checks"""
    total_records: int = 0
    interactions: int = 0
    noise_records: int = 0
    students: int = 0
    course_types: int = 0
    kc_types: int = 0
    per_student: Dict[str, int] = field(default_factory=dict)
    per_skill: Dict[Tuple[str, int], int] = field(default_factory=dict)
    per_department: Dict[str, int] = field(default_factory=dict)


@dataclass
class SynthCorpus:
    records: List[RawRecord]
    metadata: StudentMetadata
    truth: GroundTruth
    bookkeeping: Bookkeeping


@dataclass
class DatasetStatistics:
    total_records: int = 0
    records_after_cleaning: int = 0
    students: int = 0
    course_types: int = 0
    kc_types: int = 0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "item": [
                    "Total Records",
                    "Records after data cleaning",
                    "Students",
                    "Types of Courses",
                    "Types of Knowledge Components",
                ],
                "value": [
                    self.total_records,
                    self.records_after_cleaning,
                    self.students,
                    self.course_types,
                    self.kc_types,
                ],
            }
        )


def skill_catalog(n_skills: int) -> List[Tuple[str, int]]:
    """First n_skills (subject, level) pairs in subject-major order"""
    subjects = list(SUBJECTS)
    i = 0
    while len(subjects) * len(LEVELS) < n_skills:
        subjects.append(f"X{i:03d}")
        i += 1
    pairs = [(s, l) for s in subjects for l in LEVELS]
    return pairs[:n_skills]


def _mean_pass_rate(intercept: float, logits: np.ndarray) -> float:
    return float(stable_sigmoid(logits + intercept).mean())


def calibrate_intercept(logits: np.ndarray, target: float, bound: float, steps: int) -> float:
    """Bisection on a global intercept so mean(sigmoid(c + logits)) == target"""
    lo, hi = -bound, bound
    low_rate, high_rate = _mean_pass_rate(lo, logits), _mean_pass_rate(hi, logits)
    if not low_rate <= target <= high_rate:
        raise CalibrationError(
            f"target pass rate {target:.4f} unreachable: achievable range "
            f"[{low_rate:.4f}, {high_rate:.4f}] with intercept bound {bound}"
        )
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if _mean_pass_rate(mid, logits) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    intercept = 0.5 * (lo + hi)
    achieved = _mean_pass_rate(intercept, logits)
    if abs(achieved - target) > 1e-6:
        raise CalibrationError(
            f"calibration stopped after {steps} steps: achieved {achieved:.6f} vs target {target:.6f}"
        )
    return intercept


def generate(config: SynthConfig) -> SynthCorpus:
    """
    Generate a corpus, its student metadata and ground truth

    Args:
        config: generator settings; config.seed fixes every random draw

    Returns:
        SynthCorpus with records in emission order (sorted by year per student)
    """
    rng = np.random.default_rng(config.seed if config.seed is not None else 0)
    pairs = skill_catalog(config.n_skills)
    subjects = list(dict.fromkeys(s for s, _ in pairs))
    cluster_of = np.array([subjects.index(s) for s, _ in pairs])

    # Course numbers: one to three per skill, all inside the skill's level band
    course_numbers = []
    for _, level in pairs:
        count = int(rng.integers(1, 4))
        course_numbers.append(sorted({level + int(x) for x in rng.integers(0, 1000, size=count)}))

    discrimination = np.exp(rng.normal(0.0, config.discrimination_spread, size=len(pairs)))
    difficulty = rng.normal(0.0, config.difficulty_spread, size=len(pairs))

    n = config.n_students
    ids = rng.choice(9_000_000, size=n, replace=False) + 1_000_000
    weights = np.array([d.weight for d in config.department_mix])
    dept_idx = rng.choice(len(config.department_mix), size=n, p=weights / weights.sum())
    general = rng.normal(0.0, config.ability_spread, size=n)
    abilities = general[:, None] + rng.normal(0.0, config.cluster_ability_spread, size=(n, len(subjects)))

    metadata: StudentMetadata = {}
    rows: List[Tuple[int, int, int, int]] = []   # student, step, skill, year
    logits: List[float] = []
    n_years = len(config.years)
    for s in range(n):
        dept = config.department_mix[dept_idx[s]]
        metadata[str(ids[s])] = StudentInfo(college=dept.college, department=dept.code)
        count = int(rng.integers(config.records_per_student.min, config.records_per_student.max + 1))
        skills = rng.integers(0, len(pairs), size=count)
        years = np.sort(rng.integers(0, n_years, size=count))
        attempts: Counter = Counter()
        for step in range(count):
            k = int(skills[step])
            c = cluster_of[k]
            logits.append(
                discrimination[k] * (abilities[s, c] - difficulty[k])
                + config.learning_rate_gain * attempts[c]
            )
            attempts[c] += 1
            rows.append((s, step, k, config.years[int(years[step])]))

    logit_arr = np.array(logits, dtype=np.float64)
    if len(logit_arr):
        intercept = calibrate_intercept(
            logit_arr, config.target_pass_rate, config.intercept_bound, config.bisection_steps
        )
    else:
        intercept = 0.0
    probs = stable_sigmoid(logit_arr + intercept)
    outcomes = (rng.random(len(probs)) < probs).astype(int)
    pass_letters = rng.choice(PASS_LETTERS, size=len(probs), p=LETTER_WEIGHTS)
    fail_letters = rng.choice(FAIL_LETTERS, size=len(probs), p=LETTER_WEIGHTS)
    number_pick = rng.random(len(probs))

    n_noise = int(round(len(rows) * config.clean_noise / (1.0 - config.clean_noise))) if rows else 0
    noise_after = Counter(rng.integers(0, len(rows), size=n_noise).tolist()) if n_noise else Counter()
    noise_grades = rng.choice(sorted(REMOVABLE_GRADES), size=n_noise)

    records: List[RawRecord] = []
    truth_rows = []
    book = Bookkeeping(interactions=len(rows), noise_records=n_noise)
    used_courses = set()
    used_skills = set()
    noise_cursor = 0
    for i, (s, step, k, year) in enumerate(rows):
        uid = str(ids[s])
        subject, level = pairs[k]
        numbers = course_numbers[k]
        number = numbers[int(number_pick[i] * len(numbers))]
        grade = pass_letters[i] if outcomes[i] else fail_letters[i]
        records.append(RawRecord(year, uid, subject, level, str(grade), number))
        truth_rows.append((uid, step, year, subject, level, float(probs[i]), int(outcomes[i])))
        book.per_student[uid] = book.per_student.get(uid, 0) + 1
        book.per_skill[(subject, level)] = book.per_skill.get((subject, level), 0) + 1
        used_courses.add((subject, number))
        used_skills.add(k)
        for _ in range(noise_after.get(i, 0)):
            records.append(RawRecord(year, uid, subject, level, str(noise_grades[noise_cursor]), number))
            noise_cursor += 1

    for s in range(n):
        if str(ids[s]) in book.per_student:
            code = config.department_mix[dept_idx[s]].code
            book.per_department[code] = book.per_department.get(code, 0) + 1
    book.total_records = len(records)
    book.students = len(book.per_student)
    book.course_types = len(used_courses)
    book.kc_types = len(used_skills)

    truth = GroundTruth(
        abilities=abilities,
        difficulty=difficulty,
        discrimination=discrimination,
        intercept=intercept,
        interactions=pd.DataFrame(
            truth_rows,
            columns=["universal_id", "step", "academic_year", "course_subject", "course_level", "probability", "correct"],
        ),
    )
    if len(probs):
        logger.info(
            f"Generated {book.interactions} interactions (+{n_noise} I/NG rows) for {book.students} students, "
            f"empirical pass rate {outcomes.mean():.4f} (target {config.target_pass_rate})"
        )
    return SynthCorpus(records=records, metadata=metadata, truth=truth, bookkeeping=book)



def summarize(records: Sequence[RawRecord]) -> DatasetStatistics:
    """Table-style dataset statistics; student/course/KC counts are after cleaning"""
    cleaned = clean(records).records
    return DatasetStatistics(
        total_records=len(records),
        records_after_cleaning=len(cleaned),
        students=len({r.universal_id for r in cleaned}),
        course_types=len(
            {(r.course_subject, r.course_number if r.course_number is not None else r.course_level) for r in cleaned}
        ),
        kc_types=len({(r.course_subject, r.course_level) for r in cleaned}),
    )


def write_corpus(corpus: SynthCorpus, out_dir: Path) -> Dict[str, Path]:
    """Write records.csv, metadata.csv and ground_truth.csv"""
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "records": out_dir / "records.csv",
        "metadata": out_dir / "metadata.csv",
        "ground_truth": out_dir / "ground_truth.csv",
    }
    pd.DataFrame(
        [
            (r.academic_year, r.universal_id, r.course_subject, r.course_level, r.grade, r.course_number)
            for r in corpus.records
        ],
        columns=["academic_year", "universal_id", "course_subject", "course_level", "grade", "course_number"],
    ).to_csv(paths["records"], index=False)
    pd.DataFrame(
        [(uid, info.college, info.department) for uid, info in corpus.metadata.items()],
        columns=["universal_id", "college", "department"],
    ).to_csv(paths["metadata"], index=False)
    corpus.truth.interactions[
        ["universal_id", "step", "academic_year", "course_subject", "course_level", "probability"]
    ].to_csv(paths["ground_truth"], index=False, float_format="%.17g")
    return paths


def bayes_predictions(truth: GroundTruth, split: DatasetSplit, max_len: int = 100) -> List[ScoredPrediction]:
    """
    Score the test targets with the generator's true probabilities

    Uses exactly the targets evaluate() scores: every window position after the first.
    A student's test sequence is the tail of their cleaned sequence.
    """
    by_student = truth.probabilities_by_student()
    scored: List[ScoredPrediction] = []
    for seq in split.test:
        probs = by_student.get(seq.universal_id)
        if probs is None or len(probs) < len(seq):
            continue
        tail = probs[len(probs) - len(seq):]
        for start in range(0, len(seq), max_len):
            for pos in range(start + 1, min(start + max_len, len(seq))):
                it = seq.interactions[pos]
                scored.append(
                    ScoredPrediction(
                        probability=tail[pos],
                        label=it.correct,
                        student_id=seq.universal_id,
                        step=pos,
                        skill_id=it.skill_id,
                    )
                )
    return scored
