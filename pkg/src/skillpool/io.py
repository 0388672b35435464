"""File formats: logits.jsonl, ranks.csv, score tables, and atomic writes.

logits.jsonl holds one object per line::

    {"gamer": "g001", "modality": "audio", "datapoint": 3, "logit": -0.41}

ranks.csv has header ``gamer,rank_a,split`` with ``rank_a`` in {0, 1} and
``split`` in {train, validation}. Score tables are CSV with header
``gamer,modality,datapoint,score``.
"""
from __future__ import annotations

import contextlib
import csv
import json
import math
import os
import tempfile
from pathlib import Path

from .errors import ValidationError
from .model import SPLITS, Dataset, LogitObservation, RankObservation


@contextlib.contextmanager
def atomic_write(path, newline=""):
    """Open a temp file next to ``path`` and move it into place on success."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline=newline, encoding="utf-8") as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def _json_number(value, what, lineno):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"line {lineno}: {what} must be a number")
    return float(value)


def read_logits_jsonl(path) -> list[LogitObservation]:
    out = []
    seen = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise ValidationError(f"{path}: line {lineno}: expected a JSON object")
            missing = {"gamer", "modality", "datapoint", "logit"} - rec.keys()
            if missing:
                raise ValidationError(f"{path}: line {lineno}: missing fields {sorted(missing)}")
            gamer, modality, datapoint = rec["gamer"], rec["modality"], rec["datapoint"]
            if not isinstance(gamer, str) or not gamer or not isinstance(modality, str) or not modality:
                raise ValidationError(f"{path}: line {lineno}: gamer and modality must be non-empty strings")
            if isinstance(datapoint, bool) or not isinstance(datapoint, int) or datapoint < 0:
                raise ValidationError(f"{path}: line {lineno}: datapoint must be a non-negative integer")
            logit = _json_number(rec["logit"], "logit", lineno)
            if not math.isfinite(logit):
                raise ValidationError(f"{path}: line {lineno}: logit must be finite")
            key = (gamer, modality, datapoint)
            if key in seen:
                raise ValidationError(
                    f"{path}: line {lineno}: duplicate (gamer, modality, datapoint) {key}, first seen on line {seen[key]}")
            seen[key] = lineno
            out.append(LogitObservation(gamer, modality, datapoint, logit))
    return out


def write_logits_jsonl(path, logits):
    with atomic_write(path, newline="\n") as fh:
        for obs in logits:
            fh.write(json.dumps({"gamer": obs.gamer, "modality": obs.modality,
                                 "datapoint": int(obs.datapoint), "logit": float(obs.logit)}) + "\n")


def read_ranks_csv(path) -> list[RankObservation]:
    out = []
    seen = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["gamer", "rank_a", "split"]:
            raise ValidationError(f"{path}: line 1: header must be gamer,rank_a,split")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ValidationError(f"{path}: line {lineno}: expected 3 fields, got {len(row)}")
            gamer, rank_a, split = row
            if not gamer:
                raise ValidationError(f"{path}: line {lineno}: empty gamer id")
            if rank_a not in ("0", "1"):
                raise ValidationError(f"{path}: line {lineno}: rank_a must be 0 or 1")
            if split not in SPLITS:
                raise ValidationError(f"{path}: line {lineno}: split must be train or validation")
            if gamer in seen:
                raise ValidationError(f"{path}: line {lineno}: duplicate gamer {gamer!r}, first seen on line {seen[gamer]}")
            seen[gamer] = lineno
            out.append(RankObservation(gamer, int(rank_a), split))
    return out


def write_ranks_csv(path, ranks):
    with atomic_write(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["gamer", "rank_a", "split"])
        for r in ranks:
            writer.writerow([r.gamer, r.rank_a, r.split])


def dataset_from_records(logits, ranks, gamers=None, modalities=None) -> Dataset:
    """Assemble a Dataset; gamers and modalities default to first-appearance order."""
    if gamers is None:
        gamers = list(dict.fromkeys([o.gamer for o in logits] + [r.gamer for r in ranks]))
    if modalities is None:
        modalities = list(dict.fromkeys(o.modality for o in logits))
    return Dataset(tuple(gamers), tuple(modalities), tuple(logits), tuple(ranks))


def load_dataset(logits_path, ranks_path) -> Dataset:
    return dataset_from_records(read_logits_jsonl(logits_path), read_ranks_csv(ranks_path))


def read_score_table(path) -> list[tuple[str, str, int, float]]:
    rows = []
    seen = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["gamer", "modality", "datapoint", "score"]:
            raise ValidationError(f"{path}: line 1: header must be gamer,modality,datapoint,score")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ValidationError(f"{path}: line {lineno}: expected 4 fields")
            gamer, modality, datapoint, score = row
            try:
                t = int(datapoint)
                s = float(score)
            except ValueError:
                raise ValidationError(f"{path}: line {lineno}: datapoint/score not numeric") from None
            if not math.isfinite(s) or t < 0 or not gamer or not modality:
                raise ValidationError(f"{path}: line {lineno}: invalid record")
            if (gamer, modality, t) in seen:
                raise ValidationError(f"{path}: line {lineno}: duplicate key {(gamer, modality, t)}")
            seen.add((gamer, modality, t))
            rows.append((gamer, modality, t, s))
    return rows


def write_score_table(path, rows):
    with atomic_write(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["gamer", "modality", "datapoint", "score"])
        for gamer, modality, t, s in rows:
            writer.writerow([gamer, modality, int(t), repr(float(s))])
