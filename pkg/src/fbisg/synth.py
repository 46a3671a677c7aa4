"""Synthetic populations with known ground truth, and the two census pathologies.

Races are drawn per geography from Dirichlet race shares, names from
race-specific Zipf pools with a configurable overlap matrix.  The census
table is corrupted by zeroing (geography, race) cells and thinning counts;
the public surname dictionary is censored by hiding rare names.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from .core import J, PersonRecord, RaceCategory
from .geo import GeoTable
from .names import DictionarySet, NameDictionary, restrict_dictionary

_STREAMS = {"population": 1, "census": 2, "censor": 3}


def default_overlap(own: float = 0.8, other_own: float = 0.3) -> tuple:
    """Row r: probability a person of race r draws a name from pool r'.

    Off-diagonal mass is spread evenly; the Other group draws only
    `other_own` from its own pool.
    """
    m = np.zeros((J, J))
    for r in range(J):
        keep = other_own if r == RaceCategory.OTHER else own
        m[r] = (1.0 - keep) / (J - 1)
        m[r, r] = keep
    return tuple(map(tuple, m))


@dataclass(frozen=True)
class SynthConfig:
    n_geographies: int = 1000
    population_mean: float = 60.0
    race_shares: tuple = (0.60, 0.20, 0.10, 0.06, 0.04)
    concentration_scale: float = 1.5
    dirichlet_concentration: Optional[tuple] = None
    record_fraction: float = 0.6
    surname_pool: tuple = (4000, 2000, 2000, 2000, 600)
    first_pool: tuple = (200, 150, 150, 150, 60)
    middle_pool: tuple = (150, 100, 100, 100, 50)
    zipf_exponent: float = 1.0
    name_overlap: tuple = field(default_factory=default_overlap)
    middle_missing_rate: float = 0.2
    middle_initial_rate: float = 0.1
    zero_out: tuple = (0.0,) * J
    undercount_rate: float = 0.0
    hide_name_mass: tuple = (0.0,) * J
    min_name_count: float = 0.0
    dictionary_population: float = 1e7
    n_sources: int = 1
    geo_name_clusters: int = 0
    seed: int = 0

    def __post_init__(self):
        for name in ("race_shares", "zero_out", "hide_name_mass"):
            v = np.asarray(getattr(self, name), float)
            if v.shape != (J,) or np.any(v < 0) or np.any(v > 1):
                raise ValueError(f"{name} must be {J} values in [0, 1]")
        for name in ("undercount_rate", "record_fraction", "middle_missing_rate",
                     "middle_initial_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.dirichlet_concentration is not None:
            c = np.asarray(self.dirichlet_concentration, float)
            if c.shape != (J,) or np.any(c <= 0):
                raise ValueError("dirichlet_concentration must be positive")
        elif self.concentration_scale <= 0:
            raise ValueError("concentration_scale must be positive")
        ov = np.asarray(self.name_overlap, float)
        if ov.shape != (J, J) or np.any(ov < 0) or not np.allclose(ov.sum(axis=1), 1.0):
            raise ValueError("name_overlap rows must be probability vectors")
        if self.n_geographies < 1 or self.n_sources < 1 or self.population_mean < 0:
            raise ValueError("n_geographies and n_sources must be positive")

    @property
    def concentration(self) -> np.ndarray:
        if self.dirichlet_concentration is not None:
            return np.asarray(self.dirichlet_concentration, float)
        return self.concentration_scale * J * np.asarray(self.race_shares, float)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synth config keys: {sorted(unknown)}")
        conv = {k: (tuple(map(tuple, v)) if k == "name_overlap" else
                    tuple(v) if isinstance(v, list) else v) for k, v in d.items()}
        return cls(**conv)


def pathology_config(**overrides) -> SynthConfig:
    """Settings that put ~20% of Asians in zero-Asian geographies and hide
    ~14% of Asian surname mass from the public dictionary."""
    base = dict(zero_out=(0.0, 0.03, 0.04, 0.21, 0.25), undercount_rate=0.02,
                hide_name_mass=(0.07, 0.03, 0.04, 0.14, 0.10))
    base.update(overrides)
    return SynthConfig(**base)


def _rng(seed: int, stream: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), _STREAMS[stream]]))


def _name_string(field_kind: str, index: int) -> str:
    letters = []
    k = index
    while True:
        k, rem = divmod(k, 26)
        letters.append(chr(ord("A") + rem))
        if k == 0:
            break
        k -= 1
    return {"surname": "S", "first": "F", "middle": "M"}[field_kind] + "".join(reversed(letters))


@dataclass
class NamePools:
    """Names of one field, their owning pool, and per-pool Zipf probabilities."""

    field_kind: str
    names: tuple
    pool_of: np.ndarray        # (K,) pool (race) index of each name
    within_pool: np.ndarray    # (K,) probability of the name inside its pool

    def name_given_race(self, overlap) -> np.ndarray:
        """(K, J) true P(name | race) under the overlap mixture."""
        ov = np.asarray(overlap, float)
        return self.within_pool[:, None] * ov[:, self.pool_of].T


def make_pools(field_kind: str, sizes, exponent: float) -> NamePools:
    names, pool_of, within = [], [], []
    for r, size in enumerate(sizes):
        w = 1.0 / np.arange(1, size + 1) ** exponent
        within.append(w / w.sum())
        pool_of.append(np.full(size, r))
    pool_of = np.concatenate(pool_of)
    names = tuple(_name_string(field_kind, i) for i in range(pool_of.size))
    return NamePools(field_kind, names, pool_of, np.concatenate(within))


@dataclass
class SyntheticPopulation:
    records: list
    true_table: GeoTable
    dictionaries: DictionarySet     # population-level ("full") dictionaries
    zeta: np.ndarray                # (G, J) true race shares per geography
    record_source: np.ndarray       # (n,) source label per record
    pools: dict
    config: SynthConfig

    def records_for_source(self, source: str) -> list:
        return [r for r, s in zip(self.records, self.record_source) if s == source]

    @property
    def sources(self) -> list:
        return sorted(set(self.record_source.tolist()))


def _draw_names(rng, races, pools: NamePools, overlap, clusters=None, n_clusters=0):
    """Draw one name per person given race (and optional geography cluster)."""
    ov = np.asarray(overlap, float)
    n = races.size
    out = np.empty(n, dtype=np.int64)
    # pool chosen per person
    u = rng.random(n)
    pool = (u[:, None] > np.cumsum(ov[races], axis=1)).sum(axis=1)
    pool = np.minimum(pool, J - 1)
    for p in range(J):
        members = np.flatnonzero(pool == p)
        if members.size == 0:
            continue
        ids = np.flatnonzero(pools.pool_of == p)
        probs = pools.within_pool[ids]
        if n_clusters and clusters is not None:
            for c in range(n_clusters):
                sub = members[clusters[members] == c]
                if sub.size == 0:
                    continue
                sel = (np.arange(ids.size) % n_clusters) == c
                if not sel.any():
                    sel[:] = True
                pc = probs * sel
                out[sub] = ids[rng.choice(ids.size, size=sub.size, p=pc / pc.sum())]
        else:
            out[members] = ids[rng.choice(ids.size, size=members.size, p=probs)]
    return out


def generate_population(config: SynthConfig = SynthConfig()) -> SyntheticPopulation:
    """Draw a population, its true census table and full name dictionaries.

    Per geography: true shares ~ Dirichlet(concentration), size ~ Poisson,
    races i.i.d. from the shares.  The census table tallies everyone;
    records are a random ``record_fraction`` subset of people.
    """
    rng = _rng(config.seed, "population")
    G = config.n_geographies
    zeta = rng.dirichlet(config.concentration, size=G)
    sizes = rng.poisson(config.population_mean, size=G) if config.population_mean > 0 \
        else np.zeros(G, np.int64)
    geo_of = np.repeat(np.arange(G), sizes)
    # inverse-CDF categorical draw per person
    u = rng.random(geo_of.size)
    races = (u[:, None] > np.cumsum(zeta[geo_of], axis=1)).sum(axis=1)
    races = np.minimum(races, J - 1)
    counts = np.zeros((G, J), dtype=np.int64)
    np.add.at(counts, (geo_of, races), 1)
    geo_ids = [f"G{g:06d}" for g in range(G)]
    true_table = GeoTable(geo_ids, counts, "block")

    in_sample = rng.random(geo_of.size) < config.record_fraction
    pools = {
        "surname": make_pools("surname", config.surname_pool, config.zipf_exponent),
        "first": make_pools("first", config.first_pool, config.zipf_exponent),
        "middle": make_pools("middle", config.middle_pool, config.zipf_exponent),
    }
    clusters = None
    if config.geo_name_clusters:
        clusters = rng.integers(0, config.geo_name_clusters, size=G)[geo_of]
    draws = {k: _draw_names(rng, races, p, config.name_overlap,
                            clusters if k == "surname" else None, config.geo_name_clusters)
             for k, p in pools.items()}
    mid_u = rng.random(geo_of.size)
    mid_missing = mid_u < config.middle_missing_rate
    mid_initial = (~mid_missing) & (mid_u < config.middle_missing_rate + config.middle_initial_rate)

    source_of_geo = (np.arange(G) * config.n_sources) // G
    labels = np.array([f"S{s + 1}" for s in range(config.n_sources)])
    records = []
    rec_source = []
    for i in np.flatnonzero(in_sample):
        mid = pools["middle"].names[draws["middle"][i]]
        if mid_missing[i]:
            mid = ""
        elif mid_initial[i]:
            mid = mid[1]  # first letter after the field prefix
        records.append(PersonRecord(
            record_id=f"P{i:08d}", surname_key=pools["surname"].names[draws["surname"][i]],
            first_key=pools["first"].names[draws["first"][i]], middle_key=mid,
            geo_id=geo_ids[geo_of[i]], true_race=RaceCategory(int(races[i]))))
        rec_source.append(labels[source_of_geo[geo_of[i]]])

    national = np.asarray(config.race_shares, float) * config.dictionary_population
    dicts = {}
    for kind, p in pools.items():
        nr = p.name_given_race(config.name_overlap)
        dicts[kind] = NameDictionary(kind, p.names, nr * national, national_counts=national,
                                     provenance={"sources": {"synthetic_full": len(p.names)}})
    return SyntheticPopulation(records=records, true_table=true_table,
                               dictionaries=DictionarySet(**dicts), zeta=zeta,
                               record_source=np.asarray(rec_source), pools=pools, config=config)


def corrupt_census(true_table: GeoTable, config: SynthConfig) -> GeoTable:
    """Zero out (geography, race) cells, then thin the remaining counts.

    Cell (g, r) is zeroed with probability ``zero_out[r]``; every remaining
    person is then dropped with probability ``undercount_rate``.
    """
    rng = _rng(config.seed, "census")
    counts = true_table.counts.copy()
    zero = rng.random(counts.shape) < np.asarray(config.zero_out, float)[None, :]
    counts[zero] = 0
    if config.undercount_rate > 0:
        counts = rng.binomial(counts, 1.0 - config.undercount_rate)
    return GeoTable(true_table.geo_ids, counts, true_table.level_label)


@dataclass
class CensorReport:
    removed: int
    kept: int
    removed_mass: np.ndarray   # per race, share of P(name | race) mass hidden


def censor_dictionary(full: NameDictionary, config: SynthConfig):
    """Public dictionary with rare names removed.

    Names whose total count is below ``min_name_count`` go first.  Then,
    per race r with ``hide_name_mass[r] > 0``, names whose largest count is
    in race r are removed rarest first until that much of P(name | r) is
    hidden.  Returns ``(dictionary, CensorReport)``.
    """
    counts = full.counts
    total = counts.sum(axis=1)
    keep = total >= config.min_name_count
    p_nr = full.p_name_given_race
    dominant = np.argmax(counts, axis=1) if len(full) else np.zeros(0, np.int64)
    hide = np.asarray(config.hide_name_mass, float)
    rng = _rng(config.seed, "censor")
    tiebreak = rng.random(len(full))
    for r in range(J):
        if hide[r] <= 0:
            continue
        already = p_nr[~keep, r].sum()
        cand = np.flatnonzero(keep & (dominant == r))
        order = cand[np.lexsort((tiebreak[cand], total[cand]))]
        hidden = already
        for k in order:
            if hidden >= hide[r]:
                break
            keep[k] = False
            hidden += p_nr[k, r]
    removed_mass = p_nr[~keep].sum(axis=0) if len(full) else np.zeros(J)
    public = restrict_dictionary(full, keep)
    public.provenance = {"sources": {"synthetic_public": int(keep.sum())}}
    return public, CensorReport(removed=int((~keep).sum()), kept=int(keep.sum()),
                                removed_mass=removed_mass)
