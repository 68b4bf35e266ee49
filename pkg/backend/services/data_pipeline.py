"""
Data Pipeline Service
Turns institutional course records into chronologically split student sequences

Stages: parse -> clean -> build vocabulary -> encode -> split by year -> window.
Department and college filters select student subsets without renumbering skills.
"""
from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import pandas as pd
import yaml

from errors import ConfigError, DataFormatError, EncodingError, GradeClassificationError

logger = logging.getLogger(__name__)


RECORD_COLUMNS = ["academic_year", "universal_id", "course_subject", "course_level", "grade"]
METADATA_COLUMNS = ["universal_id", "college", "department"]
SEQUENCE_COLUMNS = ["universal_id", "academic_year", "skill_id", "correct"]

PASS_GRADES = frozenset({"A", "B", "C", "CR"})
FAIL_GRADES = frozenset({"D", "F", "W", "NC"})
REMOVABLE_GRADES = frozenset({"I", "NG"})
GRADES = PASS_GRADES | FAIL_GRADES | REMOVABLE_GRADES

# fills every cell of a row whose field count differs from the header
RAGGED = "\x00ragged"

CsvSource = Union[str, Path, io.TextIOBase]


@dataclass(frozen=True)
class RawRecord:
    """One row of the student information system export"""
    academic_year: int
    universal_id: str
    course_subject: str
    course_level: int
    grade: str
    course_number: Optional[int] = None


@dataclass
class RejectedRow:
    line: int
    reason: str


@dataclass
class ParseResult:
    records: List[RawRecord]
    rejects: List[RejectedRow] = field(default_factory=list)


@dataclass
class CleanResult:
    records: List[RawRecord]
    removed: int


@dataclass(frozen=True)
class Interaction:
    skill_id: int
    correct: int
    academic_year: int


@dataclass(frozen=True)
class StudentSequence:
    universal_id: str
    interactions: Tuple[Interaction, ...]
    usable: bool = True

    def __len__(self) -> int:
        return len(self.interactions)


class SkillVocabulary:
    """Bijection between (course_subject, course_level) pairs and skill ids 1..K"""

    def __init__(self, pairs: Iterable[Tuple[str, int]]):
        ordered = sorted({(str(s), int(l)) for s, l in pairs})
        self._pairs: List[Tuple[str, int]] = ordered
        self._ids: Dict[Tuple[str, int], int] = {pair: i for i, pair in enumerate(ordered, start=1)}

    def __len__(self) -> int:
        return len(self._pairs)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, SkillVocabulary) and self._pairs == other._pairs

    @property
    def pairs(self) -> List[Tuple[str, int]]:
        return list(self._pairs)

    def lookup(self, subject: str, level: int) -> int:
        try:
            return self._ids[(subject, int(level))]
        except KeyError:
            raise EncodingError(f"pair ({subject}, {level}) is not in the vocabulary") from None

    def reverse_lookup(self, skill_id: int) -> Tuple[str, int]:
        if not 1 <= skill_id <= len(self._pairs):
            raise EncodingError(f"skill id {skill_id} outside 1..{len(self._pairs)}")
        return self._pairs[skill_id - 1]

    def __contains__(self, pair: Tuple[str, int]) -> bool:
        return pair in self._ids


@dataclass(frozen=True)
class StudentInfo:
    college: str
    department: str


StudentMetadata = Dict[str, StudentInfo]


@dataclass
class DatasetSplit:
    train: List[StudentSequence]
    test: List[StudentSequence]
    vocabulary: SkillVocabulary
    provenance: Dict[str, object] = field(default_factory=dict)

    @property
    def num_skills(self) -> int:
        return len(self.vocabulary)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def _read_frame(source: CsvSource) -> pd.DataFrame:
    """
    Read a CSV as strings, indexed by physical line number (the header is line 1)

    Blank lines are dropped. A row whose field count differs from the header's
    keeps its line number with every cell set to RAGGED.
    """
    text = Path(source).read_text(encoding="utf-8") if isinstance(source, (str, Path)) else source.read()
    if not text.strip():
        raise DataFormatError("empty CSV: no header row")
    # comma count bounds the field count, so no row overflows the column list
    widest = max(line.count(",") + 1 for line in text.splitlines())
    raw = pd.read_csv(
        io.StringIO(text),
        header=None,
        names=list(range(widest)),
        dtype=str,
        keep_default_na=False,
        skip_blank_lines=False,
        skipinitialspace=True,
        engine="python",
    )
    raw.index = raw.index + 1
    fields = raw.notna().sum(axis=1)
    raw = raw[fields > 0]
    header_width = int(fields[raw.index[0]])
    frame = raw.iloc[1:, :header_width].copy()
    frame.columns = [str(name).strip() for name in raw.iloc[0, :header_width]]
    frame.loc[fields[frame.index] != header_width] = RAGGED
    return frame


def parse_records(source: CsvSource) -> ParseResult:
    """
    Parse the record CSV into RawRecords

    Args:
        source: path or text stream with header
            academic_year,universal_id,course_subject,course_level,grade[,course_number]

    Returns:
        ParseResult with accepted records and per-line rejects
    """
    frame = _read_frame(source)
    for column in RECORD_COLUMNS:
        if column not in frame.columns:
            raise DataFormatError(f"missing column: {column}")
    has_number = "course_number" in frame.columns

    records: List[RawRecord] = []
    rejects: List[RejectedRow] = []

    for line, row in zip(frame.index, frame.itertuples(index=False)):
        values = row._asdict()
        if values["academic_year"] == RAGGED:
            rejects.append(RejectedRow(line=int(line), reason="field count"))
            continue
        reason = None
        try:
            year = int(values["academic_year"])
        except ValueError:
            reason = "unparseable year"
        if reason is None:
            try:
                level = int(values["course_level"])
            except ValueError:
                reason = "unparseable level"
        subject = values["course_subject"].strip()
        grade = values["grade"].strip().upper()
        number: Optional[int] = None
        if reason is None and (level < 0 or level % 1000):
            reason = "level not a multiple of 1000"
        if reason is None and len(subject) != 4:
            reason = "subject length"
        if reason is None and not values["universal_id"].strip():
            reason = "missing universal id"
        if reason is None and grade not in GRADES:
            reason = f"unknown grade {grade!r}"
        if reason is None and has_number and values["course_number"].strip():
            try:
                number = int(values["course_number"])
            except ValueError:
                reason = "unparseable course number"
            else:
                if number < 0 or (number // 1000) * 1000 != level:
                    reason = "level mismatch"

        if reason is not None:
            rejects.append(RejectedRow(line=int(line), reason=reason))
            continue

        records.append(
            RawRecord(
                academic_year=year,
                universal_id=values["universal_id"].strip(),
                course_subject=subject,
                course_level=level,
                grade=grade,
                course_number=number,
            )
        )

    logger.info(f"Parsed {len(records)} records ({len(rejects)} rejected)")
    return ParseResult(records=records, rejects=rejects)


def parse_metadata(source: CsvSource) -> StudentMetadata:
    """Read universal_id -> (college, department); ids must be unique"""
    frame = _read_frame(source)
    for column in METADATA_COLUMNS:
        if column not in frame.columns:
            raise DataFormatError(f"missing column: {column}")
    metadata: StudentMetadata = {}
    for line, row in zip(frame.index, frame.itertuples(index=False)):
        if row.universal_id == RAGGED:
            raise DataFormatError(f"metadata line {line}: expected {len(frame.columns)} fields")
        uid = row.universal_id.strip()
        if uid in metadata:
            raise DataFormatError(f"duplicate universal_id {uid} in metadata (line {line})")
        metadata[uid] = StudentInfo(college=row.college.strip(), department=row.department.strip())
    return metadata


def write_rejects(rejects: Sequence[RejectedRow], path: Path) -> None:
    pd.DataFrame([(r.line, r.reason) for r in rejects], columns=["line", "reason"]).to_csv(path, index=False)


# ---------------------------------------------------------------------------
# Cleaning and encoding
# ---------------------------------------------------------------------------


def clean(records: Sequence[RawRecord]) -> CleanResult:
    """Drop incomplete (I) and non-gradable (NG) records"""
    kept = [r for r in records if r.grade not in REMOVABLE_GRADES]
    removed = len(records) - len(kept)
    if removed:
        logger.info(f"Removed {removed} incomplete/non-gradable records")
    return CleanResult(records=kept, removed=removed)


def binarize_grade(grade: str) -> int:
    """A, B, C and CR pass (1); D, F, W and NC fail (0)"""
    if grade in PASS_GRADES:
        return 1
    if grade in FAIL_GRADES:
        return 0
    raise GradeClassificationError(f"cannot classify grade {grade!r}")


def build_vocabulary(records: Iterable[RawRecord]) -> SkillVocabulary:
    vocab = SkillVocabulary((r.course_subject, r.course_level) for r in records)
    logger.info(f"Built vocabulary with {len(vocab)} skills")
    return vocab


def encode(records: Sequence[RawRecord], vocab: SkillVocabulary) -> Dict[str, List[Interaction]]:
    """
    Encode cleaned records into per-student interaction lists

    Students appear in first-seen order; each list is ordered by academic year
    with input order kept inside a year.
    """
    grouped: Dict[str, List[Interaction]] = {}
    for record in records:
        interaction = Interaction(
            skill_id=vocab.lookup(record.course_subject, record.course_level),
            correct=binarize_grade(record.grade),
            academic_year=record.academic_year,
        )
        grouped.setdefault(record.universal_id, []).append(interaction)
    for uid, interactions in grouped.items():
        # sorted() is stable, so ties keep file order
        grouped[uid] = sorted(interactions, key=lambda it: it.academic_year)
    return grouped


def to_sequences(encoded: Dict[str, List[Interaction]]) -> List[StudentSequence]:
    return [StudentSequence(uid, tuple(items)) for uid, items in encoded.items() if items]


# ---------------------------------------------------------------------------
# Splitting, windowing and filtering
# ---------------------------------------------------------------------------


def split_by_year(
    sequences: Sequence[StudentSequence],
    boundary_year: int,
    vocabulary: SkillVocabulary,
    provenance: Optional[Dict[str, object]] = None,
) -> DatasetSplit:
    """
    Chronological split: years before the boundary train, the rest test

    Students may appear on both sides; test sequences carry no warm-up history.
    """
    years = [it.academic_year for seq in sequences for it in seq.interactions]
    if not years:
        raise ConfigError("cannot split an empty corpus")
    first, last = min(years), max(years)
    if not first < boundary_year <= last + 1:
        raise ConfigError(f"boundary year {boundary_year} outside data range {first}..{last + 1}")

    train: List[StudentSequence] = []
    test: List[StudentSequence] = []
    for seq in sequences:
        before = tuple(it for it in seq.interactions if it.academic_year < boundary_year)
        after = tuple(it for it in seq.interactions if it.academic_year >= boundary_year)
        if before:
            train.append(StudentSequence(seq.universal_id, before))
        if after:
            test.append(StudentSequence(seq.universal_id, after))

    if not test:
        logger.warning(f"Test split is empty: no interactions in or after {boundary_year}")

    train_skills = {it.skill_id for seq in train for it in seq.interactions}
    test_only = {it.skill_id for seq in test for it in seq.interactions} - train_skills
    if test_only:
        logger.warning(f"{len(test_only)} skills appear only in the test split")

    info: Dict[str, object] = dict(provenance or {})
    info.update({"boundary_year": boundary_year, "test_warm_up": "none", "test_only_skills": len(test_only)})
    logger.info(
        f"Split at {boundary_year}: {len(train)} train / {len(test)} test sequences, "
        f"{sum(map(len, train))} / {sum(map(len, test))} interactions"
    )
    return DatasetSplit(train=train, test=test, vocabulary=vocabulary, provenance=info)


def window(sequence: StudentSequence, max_len: int = 100) -> List[StudentSequence]:
    """Cut a sequence into consecutive non-overlapping windows of at most max_len"""
    if max_len < 2:
        raise ConfigError(f"max_len must be at least 2, got {max_len}")
    items = sequence.interactions
    return [
        StudentSequence(sequence.universal_id, items[i:i + max_len], usable=len(items[i:i + max_len]) >= 2)
        for i in range(0, len(items), max_len)
    ]


MISSING_POLICIES = ("exclude", "include", "error")


def _filter_split(
    split: DatasetSplit,
    metadata: StudentMetadata,
    keep: Callable[[StudentInfo], bool],
    missing: str,
    label: str,
) -> DatasetSplit:
    if missing not in MISSING_POLICIES:
        raise ConfigError(f"missing-metadata policy must be one of {MISSING_POLICIES}, got {missing!r}")

    absent = set()

    def admitted(seq: StudentSequence) -> bool:
        info = metadata.get(seq.universal_id)
        if info is None:
            absent.add(seq.universal_id)
            return missing == "include"
        return keep(info)

    train = [s for s in split.train if admitted(s)]
    test = [s for s in split.test if admitted(s)]
    if absent:
        if missing == "error":
            raise ConfigError(f"{len(absent)} students have no metadata (e.g. {sorted(absent)[0]})")
        logger.warning(f"{len(absent)} students without metadata ({missing}d) while filtering {label}")

    provenance = dict(split.provenance)
    provenance.update({"filter": label, "filter_granularity": "student", "missing_metadata": len(absent)})
    return replace(split, train=train, test=test, provenance=provenance)


def filter_by_department(
    split: DatasetSplit,
    metadata: StudentMetadata,
    codes: Iterable[str],
    missing: str = "exclude",
) -> DatasetSplit:
    """Keep students whose department is in codes; skill ids are unchanged"""
    wanted = frozenset(codes)
    return _filter_split(split, metadata, lambda info: info.department in wanted, missing, f"department={sorted(wanted)}")


def filter_by_college(
    split: DatasetSplit,
    metadata: StudentMetadata,
    codes: Iterable[str],
    missing: str = "exclude",
) -> DatasetSplit:
    """Keep students whose college is in codes (training scopes such as COE or COE+COAS)"""
    wanted = frozenset(codes)
    return _filter_split(split, metadata, lambda info: info.college in wanted, missing, f"college={sorted(wanted)}")


def preprocess(
    records: Sequence[RawRecord],
    boundary_year: int,
    provenance: Optional[Dict[str, object]] = None,
) -> Tuple[DatasetSplit, CleanResult]:
    """clean -> vocabulary over the whole corpus -> encode -> split"""
    cleaned = clean(records)
    vocab = build_vocabulary(cleaned.records)
    sequences = to_sequences(encode(cleaned.records, vocab))
    split = split_by_year(sequences, boundary_year, vocab, provenance)
    return split, cleaned


# ---------------------------------------------------------------------------
# Preprocessed directory format
# ---------------------------------------------------------------------------


def _sequences_frame(sequences: Sequence[StudentSequence]) -> pd.DataFrame:
    rows = [
        (seq.universal_id, it.academic_year, it.skill_id, it.correct)
        for seq in sequences
        for it in seq.interactions
    ]
    return pd.DataFrame(rows, columns=SEQUENCE_COLUMNS)


def _frame_sequences(frame: pd.DataFrame) -> List[StudentSequence]:
    grouped: Dict[str, List[Interaction]] = {}
    for row in frame.itertuples(index=False):
        grouped.setdefault(str(row.universal_id), []).append(
            Interaction(skill_id=int(row.skill_id), correct=int(row.correct), academic_year=int(row.academic_year))
        )
    return [StudentSequence(uid, tuple(items)) for uid, items in grouped.items()]


def save_split(split: DatasetSplit, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(
        [(i, s, l) for i, (s, l) in enumerate(split.vocabulary.pairs, start=1)],
        columns=["skill_id", "course_subject", "course_level"],
    ).to_csv(out_dir / "vocabulary.csv", index=False)
    _sequences_frame(split.train).to_csv(out_dir / "train_sequences.csv", index=False)
    _sequences_frame(split.test).to_csv(out_dir / "test_sequences.csv", index=False)
    with open(out_dir / "split_provenance.yaml", "w", encoding="utf-8") as f:
        yaml.safe_dump(split.provenance, f, sort_keys=True)


def load_vocabulary(path: Path) -> SkillVocabulary:
    frame = pd.read_csv(path, dtype={"course_subject": str})
    vocab = SkillVocabulary(zip(frame["course_subject"], frame["course_level"]))
    if list(frame["skill_id"]) != list(range(1, len(vocab) + 1)):
        raise DataFormatError(f"{path} does not list skill ids 1..{len(vocab)} in order")
    return vocab


def load_split(data_dir: Path) -> DatasetSplit:
    for name in ("vocabulary.csv", "train_sequences.csv", "test_sequences.csv"):
        if not (data_dir / name).exists():
            raise DataFormatError(f"{data_dir} is missing {name}; run preprocess first")
    vocab = load_vocabulary(data_dir / "vocabulary.csv")
    dtypes = {"universal_id": str}
    train = _frame_sequences(pd.read_csv(data_dir / "train_sequences.csv", dtype=dtypes))
    test = _frame_sequences(pd.read_csv(data_dir / "test_sequences.csv", dtype=dtypes))
    provenance: Dict[str, object] = {}
    prov_path = data_dir / "split_provenance.yaml"
    if prov_path.exists():
        provenance = yaml.safe_load(prov_path.read_text(encoding="utf-8")) or {}
    return DatasetSplit(train=train, test=test, vocabulary=vocab, provenance=provenance)


def load_metadata(data_dir: Path) -> Optional[StudentMetadata]:
    path = data_dir / "metadata.csv"
    return parse_metadata(path) if path.exists() else None
