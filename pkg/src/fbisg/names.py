"""Name normalization, name-race dictionaries and the Census surname format."""
from __future__ import annotations

import csv
import re
import unicodedata
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .core import J, RACES, DataError, PersonRecord, RaceCategory, normalize_counts

FIELD_KINDS = ("surname", "first", "middle")
_RECORD_ATTR = {"surname": "surname_key", "first": "first_key", "middle": "middle_key"}
_NON_AZ = re.compile(r"[^A-Z]")

CENSUS_SURNAME_HEADER = (
    "name", "rank", "count", "prop100k", "cum_prop100k",
    "pctwhite", "pctblack", "pctapi", "pctaian", "pct2prace", "pcthispanic",
)
# census percentage column -> category index
_CENSUS_COLUMN_RACE = {
    "pctwhite": RaceCategory.WHITE,
    "pctblack": RaceCategory.BLACK,
    "pcthispanic": RaceCategory.HISPANIC,
    "pctapi": RaceCategory.ASIAN,
    "pctaian": RaceCategory.OTHER,
    "pct2prace": RaceCategory.OTHER,
}
SUPPRESSED = "(S)"

DICT_HEADER = ("key",) + tuple(f"count_{r}" for r in RACES)
DICT_FORMAT_VERSION = 1


def normalize_name(raw) -> str:
    """Reduce a raw name to its matching key.

    Upper-cases, folds diacritics to their ASCII base letter and drops every
    character that is not A-Z afterwards (spaces, punctuation, digits, and
    letters with no ASCII decomposition).

    >>> normalize_name(" O'Brien-Smith ")
    'OBRIENSMITH'
    """
    if raw is None:
        return ""
    text = unicodedata.normalize("NFKD", str(raw).upper())
    text = "".join(c for c in text if not unicodedata.combining(c))
    return _NON_AZ.sub("", text)


class NameDictionary:
    """Name-race table for one name field.

    Stores raw (possibly fractional) counts ``m[s, r]``; both conditional
    tables are derived from them on demand.  ``national_counts`` backs the
    national race prior used when a name is not found.
    """

    def __init__(self, field_kind: str, keys: Sequence[str], counts,
                 national_counts=None, provenance: Optional[dict] = None):
        if field_kind not in FIELD_KINDS:
            raise ValueError(f"unknown field_kind {field_kind!r}")
        counts = np.asarray(counts, dtype=float).reshape(-1, J)
        keys = tuple(keys)
        if len(keys) != counts.shape[0]:
            raise ValueError("keys and counts disagree in length")
        if np.any(counts < 0) or not np.all(np.isfinite(counts)):
            raise ValueError("dictionary counts must be finite and nonnegative")
        self.field_kind = field_kind
        self.keys = keys
        self.counts = counts
        self.counts.setflags(write=False)
        self.index = {k: i for i, k in enumerate(keys)}
        if len(self.index) != len(keys):
            raise ValueError("duplicate keys in dictionary")
        if national_counts is None:
            national_counts = counts.sum(axis=0)
        self.national_counts = np.asarray(national_counts, dtype=float).reshape(J)
        self.provenance = dict(provenance or {})
        self._name_given_race = None
        self._race_given_name = None

    def __len__(self) -> int:
        return len(self.keys)

    def __contains__(self, key) -> bool:
        return key in self.index

    def __repr__(self) -> str:
        return f"NameDictionary({self.field_kind!r}, {len(self)} names)"

    @classmethod
    def empty(cls, field_kind: str, national_counts=None) -> "NameDictionary":
        return cls(field_kind, (), np.zeros((0, J)),
                   national_counts=np.zeros(J) if national_counts is None else national_counts)

    @property
    def national_prior(self) -> np.ndarray:
        return normalize_counts(self.national_counts)

    @property
    def p_name_given_race(self) -> np.ndarray:
        """(K, J) array; column r holds P(name | race r) over the listed names."""
        if self._name_given_race is None:
            col = self.counts.sum(axis=0)
            with np.errstate(invalid="ignore", divide="ignore"):
                t = np.where(col > 0, self.counts / np.where(col > 0, col, 1.0), 0.0)
            t.setflags(write=False)
            self._name_given_race = t
        return self._name_given_race

    @property
    def p_race_given_name(self) -> np.ndarray:
        """(K, J) array; row s holds P(race | name s)."""
        if self._race_given_name is None:
            row = self.counts.sum(axis=1, keepdims=True)
            with np.errstate(invalid="ignore", divide="ignore"):
                t = np.where(row > 0, self.counts / np.where(row > 0, row, 1.0), 1.0 / J)
            t.setflags(write=False)
            self._race_given_name = t
        return self._race_given_name

    def lookup(self, key: str, direction: str = "race_given_name"):
        """Return ``(vector, matched)`` for a name key.

        Unknown or empty keys give the national prior when asking for
        P(race | name), and a flat all-ones likelihood when asking for
        P(name | race); callers decide how to treat the unmatched case.
        """
        i = self.index.get(key) if key else None
        if direction == "race_given_name":
            if i is None:
                return self.national_prior.copy(), False
            return self.p_race_given_name[i].copy(), True
        if direction == "name_given_race":
            if i is None:
                return np.ones(J), False
            return self.p_name_given_race[i].copy(), True
        raise ValueError(f"unknown lookup direction {direction!r}")


def _record_key(record: PersonRecord, field_kind: str) -> str:
    key = getattr(record, _RECORD_ATTR[field_kind]) or ""
    # single-letter middle names are initials, not names
    if field_kind == "middle" and len(key) < 2:
        return ""
    return key


def build_dictionary(records: Iterable[PersonRecord], field_kind: str,
                     source: str = "labeled") -> NameDictionary:
    """Count-based dictionary from race-labeled records for one name field.

    No smoothing is applied.  Empty keys (and middle initials) are skipped.
    """
    if field_kind not in FIELD_KINDS:
        raise ValueError(f"unknown field_kind {field_kind!r}")
    index: dict[str, int] = {}
    rows: list[int] = []
    races: list[int] = []
    n_records = 0
    for rec in records:
        if rec.true_race is None:
            raise DataError(f"record {rec.record_id!r} has no race label")
        n_records += 1
        key = _record_key(rec, field_kind)
        if not key:
            continue
        rows.append(index.setdefault(key, len(index)))
        races.append(int(rec.true_race))
    if n_records == 0:
        raise DataError("cannot build a dictionary from zero labeled records")
    counts = np.zeros((len(index), J))
    np.add.at(counts, (np.asarray(rows, dtype=np.intp), np.asarray(races, dtype=np.intp)), 1.0)
    return NameDictionary(field_kind, tuple(index), counts,
                          provenance={"sources": {source: n_records}})


def merge_dictionaries(base: NameDictionary, augment: NameDictionary,
                       weights: tuple[float, float] = (1.0, 1.0)) -> NameDictionary:
    """Cell-wise sum of (weighted) counts; the key set is the union."""
    if base.field_kind != augment.field_kind:
        raise ValueError(
            f"cannot merge {base.field_kind!r} dictionary with {augment.field_kind!r}")
    wb, wa = (float(w) for w in weights)
    keys = list(base.keys)
    index = dict(base.index)
    for k in augment.keys:
        if k not in index:
            index[k] = len(keys)
            keys.append(k)
    counts = np.zeros((len(keys), J))
    counts[: len(base)] += wb * base.counts
    if len(augment):
        rows = np.fromiter((index[k] for k in augment.keys), dtype=np.intp, count=len(augment))
        counts[rows] += wa * augment.counts
    sources = dict(base.provenance.get("sources", {}))
    for label, n in augment.provenance.get("sources", {}).items():
        sources[label] = sources.get(label, 0) + n
    national = wb * base.national_counts + wa * augment.national_counts
    return NameDictionary(base.field_kind, keys, counts, national_counts=national,
                          provenance={"sources": sources})


def restrict_dictionary(d: NameDictionary, keep) -> NameDictionary:
    """Dictionary holding only rows where boolean mask `keep` is true."""
    keep = np.asarray(keep, dtype=bool)
    keys = [k for k, m in zip(d.keys, keep) if m]
    return NameDictionary(d.field_kind, keys, d.counts[keep], national_counts=d.national_counts,
                          provenance=d.provenance)


@dataclass
class CensusLoadReport:
    rows_read: int = 0
    rows_skipped: int = 0
    flagged: list = field(default_factory=list)  # names whose percentages were off
    suppressed_rows: int = 0


def _resolve_census_row(pcts: dict[str, Optional[float]]) -> np.ndarray:
    """Category-level percentages for one census row, suppression resolved.

    A category counts as suppressed when any of its source columns is
    "(S)"; the mass left over from 100 is split equally among suppressed
    categories (clamped at zero).
    """
    reported = np.zeros(J)
    suppressed = np.zeros(J, dtype=bool)
    for col, race in _CENSUS_COLUMN_RACE.items():
        v = pcts[col]
        if v is None:
            suppressed[race] = True
        else:
            reported[race] += v
    n_sup = int(suppressed.sum())
    if n_sup:
        remainder = max(100.0 - reported.sum(), 0.0)
        reported[suppressed] += remainder / n_sup
    return reported


def _open_csv(path):
    return open(path, newline="", encoding="utf-8-sig")


def load_census_surname_file(path, national_counts) -> NameDictionary:
    """Read a 2010-layout Census surname CSV into a surname dictionary.

    Each row contributes pseudo-counts ``count * P(race | name)``.  The
    header must match the Census layout (case-insensitive); rows that fail
    to parse are skipped and counted in ``provenance["report"]``.
    """
    report = CensusLoadReport()
    keys: list[str] = []
    rows: list[np.ndarray] = []
    with _open_csv(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip().lower() for h in header) != CENSUS_SURNAME_HEADER:
            raise DataError(f"{path}: header does not match the Census surname layout")
        index: dict[str, int] = {}
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            report.rows_read += 1
            try:
                if len(row) != len(CENSUS_SURNAME_HEADER):
                    raise ValueError("wrong number of fields")
                cells = dict(zip(CENSUS_SURNAME_HEADER, (c.strip() for c in row)))
                key = normalize_name(cells["name"])
                count = float(cells["count"])
                if not key or count < 0 or not np.isfinite(count):
                    raise ValueError("bad name or count")
                pcts = {}
                for col in _CENSUS_COLUMN_RACE:
                    c = cells[col]
                    pcts[col] = None if c.upper() == SUPPRESSED else float(c)
                    if pcts[col] is not None and pcts[col] < 0:
                        raise ValueError("negative percentage")
            except ValueError:
                report.rows_skipped += 1
                continue
            if any(v is None for v in pcts.values()):
                report.suppressed_rows += 1
            cat = _resolve_census_row(pcts)
            total = cat.sum()
            if not 95.0 <= total <= 105.0:
                report.flagged.append(key)
            if total <= 0:
                report.rows_skipped += 1
                continue
            pseudo = count * (cat / 100.0) / (total / 100.0)
            if key in index:
                rows[index[key]] = rows[index[key]] + pseudo
            else:
                index[key] = len(keys)
                keys.append(key)
                rows.append(pseudo)
    if not keys:
        warnings.warn(f"{path}: no surname rows found; dictionary is empty", stacklevel=2)
    counts = np.vstack(rows) if rows else np.zeros((0, J))
    return NameDictionary(
        "surname", keys, counts, national_counts=np.asarray(national_counts, float),
        provenance={"sources": {"census": report.rows_read - report.rows_skipped},
                    "report": report})


def load_spanish_surname_file(path, national_counts=None, default_weight: float = 100.0) -> NameDictionary:
    """Spanish surname list as Hispanic-only pseudo-counts.

    The file needs a ``name`` column; an optional ``count`` column sets the
    weight per name, otherwise every name gets `default_weight`.
    """
    keys, weights = [], []
    with _open_csv(path) as fh:
        reader = csv.DictReader(fh)
        fields = [f.strip().lower() for f in (reader.fieldnames or [])]
        if "name" not in fields:
            raise DataError(f"{path}: Spanish surname file needs a 'name' column")
        reader.fieldnames = fields
        seen = set()
        for row in reader:
            key = normalize_name(row.get("name"))
            if not key or key in seen:
                continue
            try:
                w = float(row["count"]) if row.get("count") not in (None, "") else default_weight
            except ValueError:
                w = default_weight
            seen.add(key)
            keys.append(key)
            weights.append(w)
    counts = np.zeros((len(keys), J))
    counts[:, RaceCategory.HISPANIC] = weights
    national = np.zeros(J) if national_counts is None else national_counts
    return NameDictionary("surname", keys, counts, national_counts=national,
                          provenance={"sources": {"spanish_surnames": len(keys)}})


def write_dictionary(d: NameDictionary, path) -> None:
    """Persist a dictionary as CSV with a one-line version comment."""
    nat = ";".join(repr(float(x)) for x in d.national_counts)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"#fbisg-dictionary,version={DICT_FORMAT_VERSION},"
                 f"field_kind={d.field_kind},national_counts={nat}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DICT_HEADER)
        for key, row in zip(d.keys, d.counts):
            w.writerow([key] + [repr(float(x)) for x in row])


def read_dictionary(path, field_kind: Optional[str] = None) -> NameDictionary:
    meta = {}
    keys, rows = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        first = fh.readline()
        if first.startswith("#"):
            for part in first[1:].strip().split(",")[1:]:
                k, _, v = part.partition("=")
                meta[k] = v
            header_line = fh.readline()
        else:
            header_line = first
        header = tuple(h.strip().lower() for h in next(csv.reader([header_line])))
        if header != DICT_HEADER:
            raise DataError(f"{path}: not a dictionary file (header {header})")
        if meta.get("version", str(DICT_FORMAT_VERSION)) != str(DICT_FORMAT_VERSION):
            raise DataError(f"{path}: unsupported dictionary version {meta['version']}")
        for row in csv.reader(fh):
            if not row:
                continue
            keys.append(row[0])
            rows.append([float(x) for x in row[1:]])
    kind = field_kind or meta.get("field_kind")
    if kind is None:
        raise DataError(f"{path}: field kind unknown")
    national = None
    if "national_counts" in meta:
        national = [float(x) for x in meta["national_counts"].split(";")]
    counts = np.asarray(rows, float).reshape(-1, J)
    return NameDictionary(kind, keys, counts, national_counts=national,
                          provenance={"sources": {str(path): len(keys)}})


@dataclass
class DictionarySet:
    """The dictionaries used for inference, one per name field."""

    surname: NameDictionary
    first: Optional[NameDictionary] = None
    middle: Optional[NameDictionary] = None

    def get(self, field_kind: str) -> Optional[NameDictionary]:
        return getattr(self, field_kind)

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for kind in FIELD_KINDS:
            d = self.get(kind)
            if d is not None:
                write_dictionary(d, directory / f"{kind}.csv")

    @classmethod
    def load(cls, directory) -> "DictionarySet":
        directory = Path(directory)
        found = {}
        for kind in FIELD_KINDS:
            p = directory / f"{kind}.csv"
            if p.exists():
                found[kind] = read_dictionary(p, kind)
        if "surname" not in found:
            raise DataError(f"{directory}: no surname.csv dictionary")
        return cls(**found)


COVERAGE_SCHEMES = ("census_last", "augmented_last", "last_first", "last_first_middle")


def coverage_report(dicts: Mapping[str, Optional[NameDictionary]],
                    records: Sequence[PersonRecord], scheme: str) -> dict:
    """Per-race share of records matching no dictionary under `scheme`.

    `dicts` may hold ``census_last``, ``augmented_last``, ``first`` and
    ``middle``; missing entries never match.  Schemes use: census surnames
    only; augmented surnames only; augmented surnames or first names;
    augmented surnames, first or middle names.
    """
    if scheme not in COVERAGE_SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    used = {
        "census_last": [("census_last", "surname")],
        "augmented_last": [("augmented_last", "surname")],
        "last_first": [("augmented_last", "surname"), ("first", "first")],
        "last_first_middle": [("augmented_last", "surname"), ("first", "first"),
                              ("middle", "middle")],
    }[scheme]
    total = np.zeros(J)
    unmatched = np.zeros(J)
    for rec in records:
        if rec.true_race is None:
            raise DataError(f"record {rec.record_id!r} has no race label")
        r = int(rec.true_race)
        total[r] += 1
        matched = False
        for name, kind in used:
            d = dicts.get(name)
            if d is not None:
                key = _record_key(rec, kind)
                if key and key in d.index:
                    matched = True
                    break
        if not matched:
            unmatched[r] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(total > 0, unmatched / np.where(total > 0, total, 1), np.nan)
    return {"scheme": scheme, "unmatched_fraction": frac, "unmatched": unmatched, "total": total}
