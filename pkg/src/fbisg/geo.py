"""Geography-level census race counts, the BISG geographic prior, zero-count diagnostics."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .core import (J, RACES, DataError, EmptyGeographyError, PersonRecord,
                   UnknownGeographyError)

GEO_HEADER = ("geo_id",) + RACES
AGGREGATION_HEADER = ("child_id", "parent_id")


@dataclass
class GeoLoadReport:
    rows_read: int = 0
    rejected: int = 0
    duplicates: int = 0
    rejected_ids: list = field(default_factory=list)


class GeoTable:
    """Census race counts per geography (integer, nonnegative)."""

    def __init__(self, geo_ids: Sequence[str], counts, level_label: str = "block"):
        counts = np.asarray(counts)
        if counts.size == 0:
            counts = np.zeros((0, J), dtype=np.int64)
        if counts.ndim != 2 or counts.shape[1] != J:
            raise ValueError(f"counts must have shape (n, {J})")
        if np.any(counts < 0) or np.any(counts != np.round(counts)):
            raise ValueError("geo counts must be nonnegative integers")
        self.geo_ids = tuple(geo_ids)
        if len(self.geo_ids) != counts.shape[0]:
            raise ValueError("geo_ids and counts disagree in length")
        self.counts = counts.astype(np.int64)
        self.counts.setflags(write=False)
        self.index = {g: i for i, g in enumerate(self.geo_ids)}
        if len(self.index) != len(self.geo_ids):
            raise ValueError("duplicate geo ids")
        self.level_label = level_label
        self.totals = self.counts.sum(axis=0)
        self.load_report: Optional[GeoLoadReport] = None

    def __len__(self) -> int:
        return len(self.geo_ids)

    def __contains__(self, geo_id) -> bool:
        return geo_id in self.index

    def __repr__(self) -> str:
        return f"GeoTable({len(self)} {self.level_label} geographies)"

    def count_vector(self, geo_id: str) -> np.ndarray:
        try:
            return self.counts[self.index[geo_id]]
        except KeyError:
            raise UnknownGeographyError(f"unknown geography {geo_id!r}") from None

    def race_shares(self) -> np.ndarray:
        """Aggregate race shares over all geographies."""
        t = self.totals.astype(float)
        return t / t.sum() if t.sum() > 0 else np.full(J, 1.0 / J)

    def resolve(self, geo_ids: Iterable[str]) -> np.ndarray:
        """Index of each id in the table, -1 where unknown."""
        get = self.index.get
        return np.fromiter((get(g, -1) for g in geo_ids), dtype=np.int64)

    def equals(self, other: "GeoTable") -> bool:
        return self.geo_ids == other.geo_ids and np.array_equal(self.counts, other.counts)


def _parse_count(cell: str) -> int:
    v = float(cell)
    if not np.isfinite(v) or v < 0 or v != int(v):
        raise ValueError(cell)
    return int(v)


def load_geo_counts(path, level_label: str = "block") -> GeoTable:
    """Read ``geo_id,white,black,hispanic,asian,other`` rows.

    Duplicate ids are summed; rows with negative or non-integer counts are
    rejected.  Both are tallied in ``table.load_report``.
    """
    report = GeoLoadReport()
    index: dict[str, int] = {}
    rows: list[list[int]] = []
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty geo counts file")
        if tuple(h.strip().lower() for h in header) != GEO_HEADER:
            raise DataError(f"{path}: expected header {','.join(GEO_HEADER)}")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            report.rows_read += 1
            try:
                if len(row) != len(GEO_HEADER) or not row[0].strip():
                    raise ValueError("bad row")
                vals = [_parse_count(c.strip()) for c in row[1:]]
            except ValueError:
                report.rejected += 1
                report.rejected_ids.append(row[0] if row else "")
                continue
            gid = row[0].strip()
            if gid in index:
                report.duplicates += 1
                rows[index[gid]] = [a + b for a, b in zip(rows[index[gid]], vals)]
            else:
                index[gid] = len(rows)
                rows.append(vals)
    if report.rows_read == 0:
        raise DataError(f"{path}: empty geo counts file")
    if report.duplicates:
        warnings.warn(f"{path}: {report.duplicates} duplicate geography row(s) summed", stacklevel=2)
    table = GeoTable(list(index), np.asarray(rows, dtype=np.int64).reshape(-1, J), level_label)
    table.load_report = report
    return table


def write_geo_counts(table: GeoTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GEO_HEADER)
        for gid, row in zip(table.geo_ids, table.counts):
            w.writerow([gid, *(int(x) for x in row)])


def load_aggregation_map(path) -> dict[str, str]:
    mapping = {}
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip().lower() for h in header) != AGGREGATION_HEADER:
            raise DataError(f"{path}: expected header child_id,parent_id")
        for row in reader:
            if len(row) >= 2 and row[0].strip():
                mapping[row[0].strip()] = row[1].strip()
    return mapping


def aggregate(table: GeoTable, mapping: Mapping[str, str], level_label: str = "parent") -> GeoTable:
    """Sum child geographies into their parents per an explicit child->parent map."""
    parents: dict[str, int] = {}
    for gid in table.geo_ids:
        if gid not in mapping:
            raise UnknownGeographyError(f"geography {gid!r} missing from aggregation map")
        parents.setdefault(mapping[gid], len(parents))
    out = np.zeros((len(parents), J), dtype=np.int64)
    idx = np.fromiter((parents[mapping[g]] for g in table.geo_ids), dtype=np.intp, count=len(table))
    np.add.at(out, idx, table.counts)
    return GeoTable(list(parents), out, level_label)


def p_race_given_geo(table: GeoTable, geo_id: str) -> np.ndarray:
    """Unsmoothed prior N_rg / N_g; zeros stay zeros."""
    n = table.count_vector(geo_id)
    total = n.sum()
    if total == 0:
        raise EmptyGeographyError(f"geography {geo_id!r} has a zero total count")
    return n / total


def zero_block_mask(table: GeoTable, geo_index) -> np.ndarray:
    """(n, J) boolean: census count of race r is zero in record i's geography."""
    geo_index = np.asarray(geo_index, dtype=np.intp)
    return table.counts[geo_index] == 0


def zero_count_summary(table: GeoTable, records: Sequence[PersonRecord]) -> dict:
    """Per race, how many labeled records live where the census counts none of their race.

    Returns ``{race: {"count_in_zero_blocks", "total", "share"}}`` plus an
    ``"all"`` entry for the pooled share.
    """
    in_zero = np.zeros(J, dtype=np.int64)
    total = np.zeros(J, dtype=np.int64)
    for rec in records:
        if rec.true_race is None:
            raise DataError(f"record {rec.record_id!r} has no race label")
        n = table.count_vector(rec.geo_id)
        r = int(rec.true_race)
        total[r] += 1
        if n[r] == 0:
            in_zero[r] += 1
    out = {}
    for r, name in enumerate(RACES):
        share = in_zero[r] / total[r] if total[r] else float("nan")
        out[name] = {"count_in_zero_blocks": int(in_zero[r]), "total": int(total[r]),
                     "share": float(share)}
    n_all = int(total.sum())
    out["all"] = {"count_in_zero_blocks": int(in_zero.sum()), "total": n_all,
                  "share": float(in_zero.sum() / n_all) if n_all else float("nan")}
    return out
