"""Labeled/unlabeled record CSVs and run manifests."""
from __future__ import annotations

import csv
import hashlib
import json
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import RACES, DataError, PersonRecord, parse_race
from .names import normalize_name

RECORD_HEADER = ("record_id", "last", "first", "middle", "geo_id", "race")


def read_records(path, require_race: bool = False) -> list[PersonRecord]:
    """Read ``record_id,last,first,middle,geo_id[,race]`` rows; names are normalized."""
    out = []
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        header = tuple(h.strip().lower() for h in next(reader, ()))
        if header not in (RECORD_HEADER, RECORD_HEADER[:-1]):
            raise DataError(f"{path}: expected header {','.join(RECORD_HEADER)}")
        has_race = len(header) == len(RECORD_HEADER)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields")
            race = None
            if has_race and row[5].strip():
                race = parse_race(row[5])
            if require_race and race is None:
                raise DataError(f"{path}:{lineno}: missing race label")
            out.append(PersonRecord(
                record_id=row[0].strip(), surname_key=normalize_name(row[1]),
                first_key=normalize_name(row[2]), middle_key=normalize_name(row[3]),
                geo_id=row[4].strip(), true_race=race))
    return out


def write_records(records: Iterable[PersonRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_HEADER)
        for r in records:
            w.writerow([r.record_id, r.surname_key, r.first_key or "", r.middle_key or "",
                        r.geo_id, "" if r.true_race is None else RACES[int(r.true_race)]])


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_digest(options: dict) -> str:
    blob = json.dumps(options, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


@dataclass
class RunManifest:
    command: list
    options: dict
    config_digest: str
    inputs: dict
    outputs: dict = field(default_factory=dict)
    seed: Optional[int] = None
    versions: dict = field(default_factory=dict)
    wall_time_seconds: float = 0.0

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")


def versions() -> dict:
    from . import __version__, kernel
    return {"fbisg": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "gibbs_backend": kernel.BACKEND}


def start_manifest(argv: Sequence[str], options: dict, inputs: Sequence, seed=None) -> RunManifest:
    digests = {}
    for p in inputs:
        if p and Path(p).is_file():
            digests[str(p)] = file_digest(p)
    m = RunManifest(command=list(argv), options=options, config_digest=config_digest(options),
                    inputs=digests, seed=seed, versions=versions())
    m._t0 = time.perf_counter()
    return m


def finish_manifest(m: RunManifest, outputs: Sequence, path) -> None:
    for p in outputs:
        if p and Path(p).is_file():
            m.outputs[str(p)] = file_digest(p)
    m.wall_time_seconds = round(time.perf_counter() - m._t0, 3)
    m.write(path)
