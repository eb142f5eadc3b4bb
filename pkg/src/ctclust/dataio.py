"""Dataset records and file formats.

Data files are long-format CSV with header
``subject_id,time,outcome,covariate_level`` (the covariate column is
optional). Posterior samples are JSON lines, checkpoints are versioned
binary snapshots, and every command writes a manifest with content
hashes of its inputs and outputs. All files are written atomically
(temp file + rename) so a crash never leaves a truncated artifact.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import pickle
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CheckpointIOFailure,
    DataParse,
    EmptyDataset,
    IOFailure,
    MisalignedInputs,
    NegativeCount,
    NonMonotoneTimes,
)

__all__ = [
    "SubjectRecord",
    "Dataset",
    "load_dataset",
    "write_dataset",
    "write_truth",
    "load_truth",
    "write_samples_jsonl",
    "read_samples_jsonl",
    "write_checkpoint",
    "read_checkpoint",
    "write_manifest",
    "atomic_write_text",
    "atomic_write_bytes",
    "file_sha256",
]

CHECKPOINT_MAGIC = "ctclust-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class SubjectRecord:
    """One subject's irregularly sampled trajectory.

    ``levels`` are 0-based covariate levels (all zero when the data has
    no covariate column; files store them 1-based).
    """

    subject_id: str
    times: np.ndarray
    outcomes: np.ndarray
    levels: np.ndarray = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.outcomes = np.asarray(self.outcomes, dtype=float)
        if self.levels is None:
            self.levels = np.zeros(self.times.shape[0], dtype=np.intp)
        self.levels = np.asarray(self.levels, dtype=np.intp)
        if not (self.times.shape == self.outcomes.shape == self.levels.shape):
            raise MisalignedInputs(f"subject {self.subject_id}: ragged columns")
        if self.times.size == 0:
            raise EmptyDataset(f"subject {self.subject_id} has no observations")
        if np.any(np.diff(self.times) <= 0):
            raise NonMonotoneTimes(
                f"subject {self.subject_id}: times must be strictly increasing"
            )
        if np.any(self.levels < 0):
            raise NegativeCount(f"subject {self.subject_id}: negative covariate level")

    @property
    def n_obs(self) -> int:
        return self.times.shape[0]

    @property
    def deltas(self) -> np.ndarray:
        return np.diff(self.times)


@dataclass
class Dataset:
    """Ordered collection of subjects."""

    subjects: list

    def __post_init__(self):
        if not self.subjects:
            raise EmptyDataset("dataset has no subjects")

    def __len__(self) -> int:
        return len(self.subjects)

    @property
    def ids(self) -> list:
        return [s.subject_id for s in self.subjects]

    @property
    def n_levels(self) -> int:
        return int(max(s.levels.max() for s in self.subjects)) + 1


def _subject_sort_key(sid: str):
    try:
        return (0, int(sid), sid)
    except ValueError:
        return (1, 0, sid)


def load_dataset(path) -> Dataset:
    """Parse a long-format CSV into a Dataset.

    Rows may arrive in any order; they are grouped by subject and sorted
    by time. Subjects are ordered by id (numerically when ids are
    integers, lexicographically otherwise).
    """
    groups: dict = {}
    has_level = False
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IOFailure(f"cannot read {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise DataParse(f"{path}: empty file")
        header = [h.strip().lower() for h in header]
        expected = ["subject_id", "time", "outcome"]
        if header[:3] != expected:
            raise DataParse(f"{path}: header row 1 must start with {','.join(expected)}")
        has_level = len(header) > 3 and header[3] == "covariate_level"
        for rownum, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < 3:
                raise DataParse(f"{path}: row {rownum}: missing outcome column")
            sid = row[0].strip()
            try:
                t = float(row[1])
                o = float(row[2])
            except ValueError as exc:
                raise DataParse(f"{path}: row {rownum}: {exc}") from exc
            lvl = 0
            if has_level and len(row) > 3 and row[3].strip():
                try:
                    lvl = int(row[3]) - 1
                except ValueError as exc:
                    raise DataParse(f"{path}: row {rownum}: {exc}") from exc
                if lvl < 0:
                    raise DataParse(f"{path}: row {rownum}: covariate level must be >= 1")
            groups.setdefault(sid, []).append((t, o, lvl))
    if not groups:
        raise EmptyDataset(f"{path}: no data rows")
    subjects = []
    for sid in sorted(groups, key=_subject_sort_key):
        rows = sorted(groups[sid], key=lambda r: r[0])
        times = np.array([r[0] for r in rows])
        if np.any(np.diff(times) <= 0):
            raise NonMonotoneTimes(f"{path}: subject {sid} has duplicate times")
        subjects.append(
            SubjectRecord(
                subject_id=sid,
                times=times,
                outcomes=np.array([r[1] for r in rows]),
                levels=np.array([r[2] for r in rows], dtype=np.intp),
            )
        )
    return Dataset(subjects)


def _format_number(x: float) -> str:
    # repr round-trips doubles exactly; integers render without the dot
    if float(x).is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def write_dataset(dataset: Dataset, path, include_levels: bool | None = None) -> None:
    if include_levels is None:
        include_levels = dataset.n_levels > 1
    rows = ["subject_id,time,outcome" + (",covariate_level" if include_levels else "")]
    for s in dataset.subjects:
        for t, o, l in zip(s.times, s.outcomes, s.levels):
            row = f"{s.subject_id},{_format_number(t)},{_format_number(o)}"
            if include_levels:
                row += f",{int(l) + 1}"
            rows.append(row)
    atomic_write_text(path, "\n".join(rows) + "\n")


def write_truth(truth: dict, path) -> None:
    atomic_write_text(path, json.dumps(truth, indent=1, sort_keys=True) + "\n")


def load_truth(path) -> dict:
    try:
        with open(path, encoding="utf-8") as handle:
            return json.load(handle)
    except OSError as exc:
        raise IOFailure(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataParse(f"{path}: {exc}") from exc


def write_samples_jsonl(path, meta: dict, sample_dicts) -> None:
    """Stream posterior samples to JSON lines; first line is the meta record."""
    lines = [json.dumps({"type": "meta", **meta}, sort_keys=True)]
    for d in sample_dicts:
        lines.append(json.dumps(d, sort_keys=True))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_samples_jsonl(path):
    """Returns (meta dict, list of sample dicts)."""
    meta = {}
    samples = []
    try:
        with open(path, encoding="utf-8") as handle:
            for lineno, line in enumerate(handle, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataParse(f"{path}: line {lineno}: {exc}") from exc
                if obj.get("type") == "meta":
                    meta = obj
                else:
                    samples.append(obj)
    except OSError as exc:
        raise IOFailure(f"cannot read {path}: {exc}") from exc
    return meta, samples


def write_checkpoint(blob: dict, path) -> None:
    payload = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "state": blob,
    }
    atomic_write_bytes(path, pickle.dumps(payload, protocol=4))


def read_checkpoint(path) -> dict:
    try:
        with open(path, "rb") as handle:
            payload = pickle.load(handle)
    except OSError as exc:
        raise CheckpointIOFailure(f"cannot read checkpoint {path}: {exc}") from exc
    except (pickle.UnpicklingError, EOFError, AttributeError) as exc:
        raise CheckpointIOFailure(f"corrupt checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("magic") != CHECKPOINT_MAGIC:
        raise CheckpointIOFailure(f"{path} is not a checkpoint file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointIOFailure(
            f"{path}: checkpoint version {payload.get('version')} unsupported"
        )
    return payload["state"]


def write_manifest(path, command: str, version: str, seed, config: dict,
                   inputs: dict, outputs: dict, timings: dict) -> None:
    """Record what produced a set of artifacts.

    ``inputs`` and ``outputs`` map file paths to their content hashes;
    identical inputs must reproduce identical output hashes.
    """
    doc = {
        "command": command,
        "version": version,
        "seed": seed,
        "config": config,
        "inputs": {str(k): v for k, v in inputs.items()},
        "outputs": {str(k): v for k, v in outputs.items()},
        "timings_seconds": timings,
    }
    atomic_write_text(path, json.dumps(doc, indent=1, sort_keys=True) + "\n")


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_bytes(path, data: bytes) -> None:
    path = str(path)
    directory = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as handle:
                handle.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from exc


def file_sha256(path) -> str:
    h = hashlib.sha256()
    try:
        with open(path, "rb") as handle:
            for chunk in iter(lambda: handle.read(65536), b""):
                h.update(chunk)
    except OSError as exc:
        raise IOFailure(f"cannot hash {path}: {exc}") from exc
    return h.hexdigest()
