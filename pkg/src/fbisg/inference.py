"""BISG and fully Bayesian BISG (collapsed Gibbs) race prediction."""
from __future__ import annotations

import csv
import hashlib
import logging
import sys
from collections.abc import Sequence as SequenceABC
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import kernel as _kernel
from ._gibbs_py import splitmix_next
from .core import (J, NAME_FIELD_SETS, RACES, DataError, EmptyGeographyError, PersonRecord,
                   RaceCategory, SamplerConfig)
from .geo import GeoTable
from .names import FIELD_KINDS, DictionarySet, _record_key

log = logging.getLogger(__name__)

SHARE_FLOOR = 1e-12
PREDICTION_HEADER = (
    "record_id", "method", *(f"p_{r}" for r in RACES), "map_race", "map_tied",
    "surname_matched", "first_matched", "middle_matched", "degenerate",
)
_INIT_SALT = np.uint64(0xD1B54A32D192ED03)


@dataclass(frozen=True)
class PosteriorPrediction:
    record_id: str
    probs: np.ndarray
    method: str
    name_match_flags: tuple[bool, bool, bool]
    map_race: RaceCategory
    map_tied: bool
    degenerate: bool = False


def map_classify(probs) -> tuple[RaceCategory, bool]:
    """Argmax race; ties go to the earliest category and are flagged."""
    if isinstance(probs, PosteriorPrediction):
        probs = probs.probs
    p = np.asarray(probs, dtype=float)
    best = int(np.argmax(p))
    tied = int(np.count_nonzero(p == p[best])) > 1
    return RaceCategory(best), tied


class PredictionSet(SequenceABC):
    """Posterior predictions for many records, stored column-wise.

    Indexing yields :class:`PosteriorPrediction` objects.  ``excluded``
    lists records that could not be scored (unknown geography, empty
    geography under BISG) with the reason.
    """

    def __init__(self, record_ids, probs, method, matched, degenerate, excluded=None):
        self.record_ids = list(record_ids)
        self.probs = np.asarray(probs, dtype=float).reshape(-1, J)
        self.method = method
        self.matched = np.asarray(matched, dtype=bool).reshape(-1, 3)
        self.degenerate = np.asarray(degenerate, dtype=bool)
        self.map_race = np.argmax(self.probs, axis=1) if len(self.probs) else np.zeros(0, np.int64)
        top = self.probs[np.arange(len(self.probs)), self.map_race] if len(self.probs) else np.zeros(0)
        self.map_tied = (self.probs == top[:, None]).sum(axis=1) > 1
        self.excluded = list(excluded or [])
        self.state: Optional[GibbsState] = None

    def __len__(self) -> int:
        return len(self.record_ids)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[k] for k in range(*i.indices(len(self)))]
        return PosteriorPrediction(
            record_id=self.record_ids[i], probs=self.probs[i].copy(), method=self.method,
            name_match_flags=tuple(bool(x) for x in self.matched[i]),
            map_race=RaceCategory(int(self.map_race[i])), map_tied=bool(self.map_tied[i]),
            degenerate=bool(self.degenerate[i]))

    def subset(self, idx) -> "PredictionSet":
        idx = np.asarray(idx)
        ids = [self.record_ids[i] for i in np.arange(len(self))[idx]]
        return PredictionSet(ids, self.probs[idx], self.method, self.matched[idx],
                             self.degenerate[idx])

    @classmethod
    def concat(cls, parts: Sequence["PredictionSet"]) -> "PredictionSet":
        parts = list(parts)
        return cls([r for p in parts for r in p.record_ids],
                   np.vstack([p.probs for p in parts]) if parts else np.zeros((0, J)),
                   parts[0].method if parts else "bisg",
                   np.vstack([p.matched for p in parts]) if parts else np.zeros((0, 3)),
                   np.concatenate([p.degenerate for p in parts]) if parts else np.zeros(0),
                   [e for p in parts for e in p.excluded])


@dataclass
class GibbsState:
    """End-of-run sampler state; record arrays are in input order."""

    labels: np.ndarray
    n_counts: np.ndarray          # (G, J) imputed-label counts per geography
    geo_ids: tuple
    geo_seeds: np.ndarray
    iteration: int
    tallies: np.ndarray
    record_geo: np.ndarray

    def recount(self) -> np.ndarray:
        out = np.zeros_like(self.n_counts)
        np.add.at(out, (self.record_geo, self.labels), 1)
        return out


# ---------------------------------------------------------------------------
# name factors

def _log(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return np.log(x)


def unmatched_surname_factor(dicts: DictionarySet, race_shares) -> np.ndarray:
    """Likelihood stand-in for a surname missing from the dictionary.

    The national race prior is a P(race | name) guess; dividing by the
    aggregate race shares of the geography table turns it into something
    proportional to P(name | race).
    """
    shares = np.maximum(np.asarray(race_shares, dtype=float), SHARE_FLOOR)
    return dicts.surname.national_prior / shares


def name_log_factors(records: Sequence[PersonRecord], dicts: DictionarySet, name_fields: str,
                     race_shares) -> tuple[np.ndarray, np.ndarray]:
    """Per-record log name factors, shape (n, 3, J), and match flags (n, 3).

    Field order is surname, first, middle.  Fields not in `name_fields`,
    and unmatched first/middle names, contribute log 1 = 0.
    """
    fields = NAME_FIELD_SETS[name_fields]
    n = len(records)
    logf = np.zeros((n, 3, J))
    matched = np.zeros((n, 3), dtype=bool)
    for f, kind in enumerate(FIELD_KINDS):
        if kind not in fields:
            continue
        d = dicts.get(kind)
        if d is None:
            if kind == "surname":
                raise DataError("a surname dictionary is required")
            continue
        get = d.index.get
        rows = np.fromiter((get(_record_key(r, kind), -1) for r in records), dtype=np.int64,
                           count=n)
        hit = rows >= 0
        matched[:, f] = hit
        table = _log(d.p_name_given_race)
        logf[hit, f] = table[rows[hit]]
        if kind == "surname":
            logf[~hit, f] = _log(unmatched_surname_factor(dicts, race_shares))
    return logf, matched


def combine_log_factors(logf: np.ndarray, log_prior: Optional[np.ndarray] = None):
    """Sum name factors (plus an optional log prior) with the zero fallback.

    Rows where every race ends at -inf drop name factors in the order
    middle, first, surname until some race survives; those rows are
    flagged degenerate.  Returns ``(log_weights, degenerate)``.
    """
    prior = 0.0 if log_prior is None else log_prior
    total = logf.sum(axis=1) + prior
    dead = ~np.isfinite(total).any(axis=1)
    degenerate = dead.copy()
    for keep in (2, 1, 0):
        if not dead.any():
            break
        sub = logf[dead, :keep].sum(axis=1) + (prior if log_prior is None else log_prior[dead])
        total[dead] = sub
        dead_now = ~np.isfinite(sub).any(axis=1)
        idx = np.flatnonzero(dead)
        dead = np.zeros_like(dead)
        dead[idx[dead_now]] = True
    return total, degenerate


def _normalize_log(total: np.ndarray) -> np.ndarray:
    m = total.max(axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    w = np.exp(total - m)
    s = w.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return w / s


# ---------------------------------------------------------------------------
# BISG

def _resolve(records, geo_table):
    gidx = geo_table.resolve(r.geo_id for r in records)
    return gidx


def bisg_predict(records: Sequence[PersonRecord], dicts: DictionarySet, geo_table: GeoTable,
                 name_fields: str = "last") -> PredictionSet:
    """BISG posteriors for many records.

    Records whose geography is unknown, or has zero census total, are
    left out and listed in ``excluded``.
    """
    records = list(records)
    gidx = _resolve(records, geo_table)
    totals = geo_table.counts.sum(axis=1)
    ok = gidx >= 0
    ok[ok] = totals[gidx[ok]] > 0
    excluded = [(r.record_id, "unknown_geography" if g < 0 else "empty_geography")
                for r, g, good in zip(records, gidx, ok) if not good]
    kept = [r for r, good in zip(records, ok) if good]
    g = gidx[ok]
    logf, matched = name_log_factors(kept, dicts, name_fields, geo_table.race_shares())
    counts = geo_table.counts[g].astype(float)
    log_prior = _log(counts / counts.sum(axis=1, keepdims=True)) if len(kept) else np.zeros((0, J))
    total, degenerate = combine_log_factors(logf, log_prior)
    probs = _normalize_log(total) if len(kept) else np.zeros((0, J))
    return PredictionSet([r.record_id for r in kept], probs, "bisg", matched, degenerate, excluded)


def bisg_posterior(record: PersonRecord, dicts: DictionarySet, geo_table: GeoTable,
                   name_fields: str = "last") -> PosteriorPrediction:
    """BISG posterior for one record: name likelihoods times P(race | geography)."""
    n = geo_table.count_vector(record.geo_id)  # raises on unknown ids
    if n.sum() == 0:
        raise EmptyGeographyError(f"geography {record.geo_id!r} has a zero total count")
    return bisg_predict([record], dicts, geo_table, name_fields)[0]


# ---------------------------------------------------------------------------
# fBISG

def gibbs_conditional(record: PersonRecord, dicts: DictionarySet, n_minus_i, N_g, alpha,
                      name_fields: str = "last", race_shares=None,
                      return_degenerate: bool = False):
    """Full conditional of one record's race given everyone else's labels.

    Proportional to the product of name factors times
    ``n_minus_i + N_g + alpha``.  `race_shares` (aggregate shares of the
    geography table) is needed only for an unmatched surname; it defaults
    to the dictionary's own national prior, i.e. a flat surname factor.
    """
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (J,))
    if np.any(alpha <= 0):
        raise ValueError("alpha must be strictly positive")
    if race_shares is None:
        race_shares = dicts.surname.national_prior
    logf, _ = name_log_factors([record], dicts, name_fields, race_shares)
    count_term = np.asarray(n_minus_i, float) + np.asarray(N_g, float) + alpha
    total, degenerate = combine_log_factors(logf, _log(count_term)[None, :])
    p = _normalize_log(total)[0]
    return (p, bool(degenerate[0])) if return_degenerate else p


def derive_geo_seeds(master_seed: int, geo_ids: Sequence[str]) -> np.ndarray:
    """Per-geography 64-bit seeds: keyed BLAKE2b of the geography id.

    Depends only on the master seed and the id, so the draws of a
    geography do not change with partitioning or table order.
    """
    key = int(master_seed).to_bytes(8, "little")
    return np.fromiter(
        (int.from_bytes(hashlib.blake2b(str(g).encode("utf-8"), digest_size=8, key=key).digest(),
                        "little") for g in geo_ids),
        dtype=np.uint64, count=len(geo_ids))


def partition_geographies(sizes, n_partitions: int) -> list[np.ndarray]:
    """Split geography indices into balanced groups (largest-first greedy)."""
    sizes = np.asarray(sizes)
    order = np.argsort(-sizes, kind="stable")
    loads = np.zeros(n_partitions)
    members: list[list[int]] = [[] for _ in range(n_partitions)]
    for g in order:
        if sizes[g] == 0:
            continue
        p = int(np.argmin(loads))
        members[p].append(int(g))
        loads[p] += sizes[g]
    return [np.sort(np.asarray(m, dtype=np.int64)) for m in members]


def _initial_labels(log_weights, counts, seeds_per_record, position, init):
    """BISG-based starting labels (MAP or one posterior draw)."""
    totals = counts.sum(axis=1, keepdims=True)
    prior = np.where(totals > 0, counts / np.where(totals > 0, totals, 1), 1.0 / J)
    total, _ = combine_log_factors(log_weights[:, None, :], _log(prior))
    probs = _normalize_log(total)
    if init == "map":
        return np.argmax(probs, axis=1).astype(np.int64)
    state = (seeds_per_record ^ _INIT_SALT) + position.astype(np.uint64)
    u = (splitmix_next(state) >> np.uint64(11)).astype(float) * (1.0 / 9007199254740992.0)
    cum = np.cumsum(probs, axis=1)
    lab = np.argmax(u[:, None] * cum[:, -1:] < cum, axis=1)
    return lab.astype(np.int64)


def run_fbisg(records: Sequence[PersonRecord], dicts: DictionarySet, geo_table: GeoTable,
              config: SamplerConfig = SamplerConfig(), backend: Optional[str] = None,
              progress: bool = False) -> PredictionSet:
    """Collapsed Gibbs sampler over race labels with census counts as data.

    Each geography runs its own chain (the conditional factorizes over
    geographies), seeded from ``config.seed`` and the geography id;
    records keep their input order within a geography.  Geographies are
    spread over ``config.parallel_partitions`` worker threads.
    """
    run_chains = _kernel.get_run_chains(backend)
    records = list(records)
    gidx = _resolve(records, geo_table)
    ok = gidx >= 0
    excluded = [(r.record_id, "unknown_geography") for r, good in zip(records, ok) if not good]
    kept = [r for r, good in zip(records, ok) if good]
    g = gidx[ok]
    n = len(kept)
    G = len(geo_table)

    logf, matched = name_log_factors(kept, dicts, config.name_fields, geo_table.race_shares())
    log_w, degenerate = combine_log_factors(logf)
    m = log_w.max(axis=1, keepdims=True) if n else np.zeros((0, 1))
    weights = np.exp(log_w - m)

    order = np.argsort(g, kind="stable")
    g_sorted = g[order]
    sizes = np.bincount(g_sorted, minlength=G)
    starts = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    position = np.arange(n) - starts[g_sorted] if n else np.zeros(0, np.int64)

    alpha = np.asarray(config.alpha, dtype=float)
    base = np.ascontiguousarray(geo_table.counts.astype(float) + alpha)
    seeds = derive_geo_seeds(config.seed, geo_table.geo_ids)

    w_sorted = np.ascontiguousarray(weights[order])
    labels = _initial_labels(log_w[order], geo_table.counts[g_sorted].astype(float),
                             seeds[g_sorted], position, config.init)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    tallies = np.zeros((n, J))
    final_counts = np.zeros((G, J), dtype=np.int64)
    rb = config.posterior_estimator == "rao_blackwell"

    parts = partition_geographies(sizes, config.parallel_partitions)

    def work(geos):
        run_chains(w_sorted, starts, base, seeds, labels, tallies, geos,
                   int(config.iterations_total), int(config.burn_in), rb, final_counts)

    if progress:
        print(f"fbisg: {n} records, {int((sizes > 0).sum())} geographies, "
              f"{len(parts)} partition(s), backend={_kernel.BACKEND if backend is None else backend}",
              file=sys.stderr)
    if len(parts) == 1:
        work(parts[0])
    else:
        with ThreadPoolExecutor(max_workers=len(parts)) as pool:
            list(pool.map(work, parts))

    inv = np.empty_like(order)
    inv[order] = np.arange(n)
    tallies_in = tallies[inv]
    probs = tallies_in / config.kept_iterations
    if rb:
        probs = probs / probs.sum(axis=1, keepdims=True)
    out = PredictionSet([r.record_id for r in kept], probs, "fbisg", matched, degenerate, excluded)
    out.state = GibbsState(labels=labels[inv], n_counts=final_counts, geo_ids=geo_table.geo_ids,
                           geo_seeds=seeds, iteration=int(config.iterations_total),
                           tallies=tallies_in, record_geo=g)
    return out


# ---------------------------------------------------------------------------
# prediction files

def _fmt(x: float) -> str:
    return repr(float(x))


def write_predictions(preds: PredictionSet, fh) -> None:
    """Write predictions as CSV to an open text file."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(PREDICTION_HEADER)
    for i in range(len(preds)):
        m = preds.matched[i]
        w.writerow([preds.record_ids[i], preds.method, *(_fmt(p) for p in preds.probs[i]),
                    RACES[int(preds.map_race[i])], int(preds.map_tied[i]),
                    int(m[0]), int(m[1]), int(m[2]), int(preds.degenerate[i])])


def read_predictions(path) -> PredictionSet:
    ids, probs, matched, degen, methods = [], [], [], [], set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != PREDICTION_HEADER:
            raise DataError(f"{path}: not a predictions file")
        for row in reader:
            if not row:
                continue
            ids.append(row[0])
            methods.add(row[1])
            probs.append([float(x) for x in row[2:7]])
            matched.append([row[9] == "1", row[10] == "1", row[11] == "1"])
            degen.append(row[12] == "1")
    if len(methods) > 1:
        raise DataError(f"{path}: mixes methods {sorted(methods)}")
    method = methods.pop() if methods else "bisg"
    return PredictionSet(ids, np.asarray(probs).reshape(-1, J), method, matched, degen)
