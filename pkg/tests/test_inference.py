import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fbisg import kernel
from fbisg.core import EmptyGeographyError, RaceCategory, SamplerConfig, UnknownGeographyError
from fbisg.geo import GeoTable
from fbisg.inference import (PREDICTION_HEADER, PredictionSet, bisg_posterior, bisg_predict,
                             derive_geo_seeds, gibbs_conditional, map_classify,
                             partition_geographies, read_predictions, run_fbisg,
                             write_predictions)
from fbisg.names import DictionarySet, NameDictionary

from conftest import make_record
import oracle

HAVE_COMPILED = kernel.compiled_run_chains is not None


def surname_dict(factors, key="S", national=(50, 50, 0, 0, 0)):
    """Two-name dictionary in which P(key | r) equals `factors`."""
    f = np.asarray(factors, float)
    counts = np.vstack([f * 100, (1 - f) * 100])
    return NameDictionary("surname", [key, "OTHERNAME"], counts, national_counts=national)


# ---------------------------------------------------------------- BISG

def test_bisg_hand_example():
    d = DictionarySet(surname_dict([0.02, 0.10, 0, 0, 0]))
    geo = GeoTable(["G"], [[8, 2, 0, 0, 0]])
    p = bisg_posterior(make_record("1", "S", "G"), d, geo)
    np.testing.assert_allclose(p.probs, [4 / 9, 5 / 9, 0, 0, 0], atol=1e-12)
    assert p.map_race == RaceCategory.BLACK and not p.degenerate


def test_bisg_flat_surname_returns_prior():
    counts = np.full((2, 5), 10.0)
    d = DictionarySet(NameDictionary("surname", ["S", "T"], counts))
    geo = GeoTable(["G"], [[5, 3, 1, 1, 0]])
    p = bisg_posterior(make_record("1", "S", "G"), d, geo)
    np.testing.assert_array_equal(p.probs, [0.5, 0.3, 0.1, 0.1, 0])


def test_bisg_zero_block_kills_true_race():
    counts = np.array([[0, 0, 90, 0, 0], [50, 50, 10, 50, 50]], float)
    d = DictionarySet(NameDictionary("surname", ["GARCIA", "SMITH"], counts))
    geo = GeoTable(["G"], [[10, 5, 0, 3, 1]])
    rec = make_record("1", "GARCIA", "G", race=2)
    p = bisg_posterior(rec, d, geo)
    assert p.probs[2] == 0.0
    assert np.isfinite(p.probs).all() and abs(p.probs.sum() - 1) < 1e-12
    assert p.map_race != RaceCategory.HISPANIC
    assert p.degenerate


def test_bisg_unmatched_surname_uses_national_over_shares():
    d = DictionarySet(NameDictionary("surname", ["S"], [[1, 1, 1, 1, 1]],
                                     national_counts=[60, 20, 10, 5, 5]))
    geo = GeoTable(["G", "H"], [[3, 1, 0, 0, 0], [1, 3, 4, 2, 0]])
    p = bisg_posterior(make_record("1", "NOPE", "G"), d, geo)
    shares = np.maximum(geo.totals / geo.totals.sum(), 1e-12)
    w = np.array([60, 20, 10, 5, 5]) / 100 / shares * np.array([3, 1, 0, 0, 0]) / 4
    np.testing.assert_allclose(p.probs, w / w.sum(), atol=1e-12)
    assert p.name_match_flags == (False, False, False)


def test_bisg_excludes_bad_geographies(small_geo, two_race_dicts):
    recs = [make_record("1", "SMITH", "A"), make_record("2", "SMITH", "Z"),
            make_record("3", "SMITH", "Q")]
    out = bisg_predict(recs, two_race_dicts, small_geo)
    assert out.record_ids == ["1"]
    assert dict(out.excluded) == {"2": "empty_geography", "3": "unknown_geography"}
    with pytest.raises(EmptyGeographyError):
        bisg_posterior(recs[1], two_race_dicts, small_geo)
    with pytest.raises(UnknownGeographyError):
        bisg_posterior(recs[2], two_race_dicts, small_geo)


def test_first_and_middle_factors_multiply():
    sur = NameDictionary("surname", ["S", "T"], [[1, 1, 1, 1, 1], [1, 1, 1, 1, 1]])
    first = NameDictionary("first", ["ANN", "BOB"], [[3, 1, 1, 1, 1], [1, 3, 1, 1, 1]])
    middle = NameDictionary("middle", ["MAE", "LOU"], [[1, 1, 2, 1, 1], [1, 1, 1, 1, 1]])
    d = DictionarySet(sur, first, middle)
    geo = GeoTable(["G"], [[1, 1, 1, 1, 1]])
    rec = make_record("1", "S", "G", first="ANN", middle="MAE")
    pf = first.p_name_given_race[0]
    pm = middle.p_name_given_race[0]
    p1 = bisg_posterior(rec, d, geo, "last").probs
    p2 = bisg_posterior(rec, d, geo, "last_first").probs
    p3 = bisg_posterior(rec, d, geo, "last_first_middle").probs
    np.testing.assert_allclose(p1, np.full(5, 0.2))
    np.testing.assert_allclose(p2, pf / pf.sum())
    np.testing.assert_allclose(p3, pf * pm / (pf * pm).sum())
    # unknown first name and middle initial are flat
    rec2 = make_record("2", "S", "G", first="ZED", middle="M")
    np.testing.assert_allclose(bisg_posterior(rec2, d, geo, "last_first_middle").probs,
                               np.full(5, 0.2))


def test_degenerate_fallback_order():
    sur = NameDictionary("surname", ["S", "T"], [[1, 0, 1, 1, 1], [1, 1, 1, 1, 1]])
    first = NameDictionary("first", ["F", "E"], [[0, 1, 0, 0, 0], [1, 1, 1, 1, 1]])
    d = DictionarySet(sur, first)
    geo = GeoTable(["G"], [[1, 1, 1, 1, 1]])
    rec = make_record("1", "S", "G", first="F")
    p = bisg_posterior(rec, d, geo, "last_first")
    assert p.degenerate
    # first name dropped, surname kept
    s = sur.p_name_given_race[0]
    np.testing.assert_allclose(p.probs, s / s.sum())
    c, deg = gibbs_conditional(rec, d, np.zeros(5), np.zeros(5), 1.0, "last_first",
                               return_degenerate=True)
    assert deg
    np.testing.assert_allclose(c, s / s.sum())


# ---------------------------------------------------------------- conditional

def test_conditional_flat_counts():
    d = DictionarySet(surname_dict([0.02, 0.10, 0, 0, 0]))
    rec = make_record("1", "S", "G")
    p = gibbs_conditional(rec, d, np.zeros(5), np.zeros(5), 1.0)
    np.testing.assert_allclose(p, [1 / 6, 5 / 6, 0, 0, 0], atol=1e-12)


def test_conditional_uniform_surname():
    d = DictionarySet(NameDictionary("surname", ["S"], [[7, 7, 7, 7, 7]]))
    p = gibbs_conditional(make_record("1", "S", "G"), d, [3, 1, 0, 0, 0], [6, 2, 0, 0, 0], 1.0)
    np.testing.assert_allclose(p, np.array([10, 4, 1, 1, 1]) / 17, atol=1e-12)


def test_conditional_rejects_bad_alpha(two_race_dicts):
    with pytest.raises(ValueError):
        gibbs_conditional(make_record("1", "SMITH", "G"), two_race_dicts, np.zeros(5),
                          np.zeros(5), 0.0)


pos = st.floats(0.01, 100.0)


@given(st.lists(st.lists(st.floats(0.0, 50.0), min_size=5, max_size=5), min_size=2, max_size=4),
       st.lists(pos, min_size=5, max_size=5),
       st.lists(st.integers(0, 20), min_size=5, max_size=5),
       st.lists(st.integers(0, 5), min_size=5, max_size=5))
@settings(max_examples=60, deadline=None)
def test_scale_invariance(rows, scale, N, n_minus):
    counts = np.asarray(rows)
    counts[0] += 0.5  # keep the queried name present in every race
    scaled = counts * np.asarray(scale)[None, :]
    rec = make_record("1", "K0", "G")
    keys = [f"K{i}" for i in range(len(rows))]
    d1 = DictionarySet(NameDictionary("surname", keys, counts))
    d2 = DictionarySet(NameDictionary("surname", keys, scaled))
    a = gibbs_conditional(rec, d1, n_minus, N, 1.0)
    b = gibbs_conditional(rec, d2, n_minus, N, 1.0)
    np.testing.assert_allclose(a, b, atol=1e-12)
    if sum(N) > 0:
        geo = GeoTable(["G"], [N])
        np.testing.assert_allclose(bisg_posterior(rec, d1, geo).probs,
                                   bisg_posterior(rec, d2, geo).probs, atol=1e-12)


# ---------------------------------------------------------------- sampler

def random_instance(rng, n_records=None, n_geo=None):
    n_geo = n_geo or int(rng.integers(1, 4))
    n = n_records or int(rng.integers(1, 5))
    n_names = int(rng.integers(1, 4))
    counts = rng.integers(0, 6, size=(n_names, 5)).astype(float)
    counts[rng.random(counts.shape) < 0.3] = 0
    counts[:, rng.random(5) < 0.5] += rng.integers(1, 4)
    national = rng.integers(1, 20, size=5).astype(float)
    keys = [f"N{k}" for k in range(n_names)]
    d = DictionarySet(NameDictionary("surname", keys, counts, national_counts=national))
    N = rng.integers(0, 5, size=(n_geo, 5))
    N[rng.random(N.shape) < 0.4] = 0
    N[0, 0] += 1  # keep the aggregate shares well defined
    geo = GeoTable([f"G{g}" for g in range(n_geo)], N)
    recs, rows, record_geo = [], [], []
    for i in range(n):
        k = int(rng.integers(0, n_names + 1))  # n_names means unmatched
        g = int(rng.integers(0, n_geo))
        recs.append(make_record(f"R{i}", keys[k] if k < n_names else "UNSEEN", f"G{g}"))
        rows.append(k if k < n_names else None)
        record_geo.append(g)
    shares = N.sum(axis=0) / N.sum()
    weights = np.array([oracle.record_weights([r], [counts], shares, national / national.sum())
                        for r in rows])
    return recs, d, geo, weights, np.array(record_geo), N


def enumerate_case(weights, record_geo, N, alpha=1.0):
    # an all-zero name factor row falls back to a flat factor
    w = np.where(weights.sum(axis=1, keepdims=True) > 0, weights, 1.0)
    return oracle.enumerate_posterior(w, record_geo, N, alpha)


def test_small_instances_match_enumeration():
    rng = np.random.default_rng(2)
    cfg = SamplerConfig(iterations_total=30500, burn_in=500, seed=5)
    for _ in range(10):
        recs, d, geo, w, rg, N = random_instance(rng)
        exact = enumerate_case(w, rg, N)
        got = run_fbisg(recs, d, geo, cfg).probs
        assert np.abs(got - exact).max() < 0.03


def test_rao_blackwell_matches_enumeration():
    rng = np.random.default_rng(3)
    cfg = SamplerConfig(iterations_total=20500, burn_in=500, seed=1,
                        posterior_estimator="rao_blackwell")
    for _ in range(5):
        recs, d, geo, w, rg, N = random_instance(rng, n_records=3)
        got = run_fbisg(recs, d, geo, cfg).probs
        assert np.abs(got - enumerate_case(w, rg, N)).max() < 0.02
        assert np.allclose(got.sum(axis=1), 1)


def test_single_record_is_exact_under_rao_blackwell():
    # one record: the conditional does not depend on the state
    d = DictionarySet(surname_dict([0.02, 0.10, 0.05, 0.01, 0.2], national=(1, 1, 1, 1, 1)))
    geo = GeoTable(["G"], [[3, 0, 1, 0, 2]])
    rec = make_record("1", "S", "G")
    cfg = SamplerConfig(iterations_total=20, burn_in=5, posterior_estimator="rao_blackwell")
    got = run_fbisg([rec], d, geo, cfg).probs[0]
    np.testing.assert_allclose(got, gibbs_conditional(rec, d, np.zeros(5), [3, 0, 1, 0, 2], 1.0),
                               atol=1e-12)


def test_one_hot_at_single_kept_sweep(two_race_dicts, small_geo):
    recs = [make_record(str(i), "SMITH", "A") for i in range(5)]
    out = run_fbisg(recs, two_race_dicts, small_geo, SamplerConfig(iterations_total=11, burn_in=10))
    assert set(np.unique(out.probs)) <= {0.0, 1.0}
    np.testing.assert_array_equal(out.probs.sum(axis=1), 1)
    np.testing.assert_array_equal(np.argmax(out.probs, axis=1), out.state.labels)


@pytest.mark.parametrize("iters", [1, 2, 7, 40])
def test_count_consistency(iters):
    rng = np.random.default_rng(iters)
    recs, d, geo, *_ = random_instance(rng, n_records=40, n_geo=3)
    out = run_fbisg(recs, d, geo, SamplerConfig(iterations_total=iters, burn_in=0))
    np.testing.assert_array_equal(out.state.recount(), out.state.n_counts)
    assert out.state.n_counts.sum() == len(recs)


def test_zero_guarantee():
    d = DictionarySet(NameDictionary("surname", ["CHEN", "SMITH"],
                                     [[1, 1, 2, 50, 1], [80, 30, 10, 5, 5]]))
    geo = GeoTable(["G", "H"], [[40, 10, 5, 0, 0], [3, 0, 0, 8, 0]])
    recs = [make_record(str(i), "CHEN" if i % 2 else "SMITH", "G" if i < 30 else "H")
            for i in range(40)]
    cfg = SamplerConfig(posterior_estimator="rao_blackwell")
    out = run_fbisg(recs, d, geo, cfg)
    assert np.all(out.probs > 0)
    assert np.all(bisg_predict(recs[:30], d, geo).probs[:, 3:] == 0)


def test_bisg_limit():
    d = DictionarySet(surname_dict([0.02, 0.10, 0.05, 0.01, 0.2], national=(1, 1, 1, 1, 1)))
    shares = np.array([0.5, 0.2, 0.15, 0.1, 0.05])
    geo = GeoTable(["G"], [np.round(shares * 1e6)])
    rec = make_record("1", "S", "G")
    bisg = bisg_posterior(rec, d, geo).probs
    cond = gibbs_conditional(rec, d, np.zeros(5), geo.counts[0], 1.0)
    assert np.abs(cond - bisg).max() < 1e-5
    fb = run_fbisg([rec], d, geo, SamplerConfig(iterations_total=20500, burn_in=500)).probs[0]
    assert np.abs(fb - bisg).max() < 0.01


def test_determinism_and_partition_independence():
    rng = np.random.default_rng(9)
    recs, d, geo, *_ = random_instance(rng, n_records=60, n_geo=3)
    cfg = SamplerConfig(iterations_total=300, burn_in=100, seed=77)
    a = run_fbisg(recs, d, geo, cfg)
    b = run_fbisg(recs, d, geo, cfg)
    np.testing.assert_array_equal(a.probs, b.probs)
    for parts in (2, 3, 8):
        c = run_fbisg(recs, d, geo, SamplerConfig(iterations_total=300, burn_in=100, seed=77,
                                                  parallel_partitions=parts))
        np.testing.assert_array_equal(a.probs, c.probs)
    other = run_fbisg(recs, d, geo, SamplerConfig(iterations_total=300, burn_in=100, seed=78))
    assert not np.array_equal(a.probs, other.probs)


def test_geography_table_order_does_not_matter():
    rng = np.random.default_rng(4)
    recs, d, geo, *_ = random_instance(rng, n_records=30, n_geo=3)
    rev = GeoTable(geo.geo_ids[::-1], geo.counts[::-1])
    cfg = SamplerConfig(iterations_total=200, burn_in=50)
    np.testing.assert_array_equal(run_fbisg(recs, d, geo, cfg).probs,
                                  run_fbisg(recs, d, rev, cfg).probs)


@pytest.mark.skipif(not HAVE_COMPILED, reason="compiled kernel not built")
@pytest.mark.parametrize("estimator", ["label_frequency", "rao_blackwell"])
@pytest.mark.parametrize("init", ["map", "sample"])
def test_backends_bit_identical(estimator, init):
    rng = np.random.default_rng(21)
    recs, d, geo, *_ = random_instance(rng, n_records=80, n_geo=3)
    cfg = SamplerConfig(iterations_total=150, burn_in=50, posterior_estimator=estimator,
                        init=init, seed=3)
    a = run_fbisg(recs, d, geo, cfg, backend="compiled")
    b = run_fbisg(recs, d, geo, cfg, backend="python")
    np.testing.assert_array_equal(a.probs, b.probs)
    np.testing.assert_array_equal(a.state.labels, b.state.labels)


def test_unknown_geography_excluded(two_race_dicts, small_geo):
    recs = [make_record("1", "SMITH", "A"), make_record("2", "SMITH", "nowhere")]
    out = run_fbisg(recs, two_race_dicts, small_geo, SamplerConfig(iterations_total=10, burn_in=0))
    assert out.record_ids == ["1"] and out.excluded == [("2", "unknown_geography")]


def test_geo_seeds_and_partitions():
    s = derive_geo_seeds(1, ["A", "B"])
    assert s.dtype == np.uint64 and s[0] != s[1]
    np.testing.assert_array_equal(derive_geo_seeds(1, ["B"]), s[1:])
    assert not np.array_equal(derive_geo_seeds(2, ["A"]), s[:1])
    parts = partition_geographies([5, 0, 3, 3, 1], 2)
    assert sorted(np.concatenate(parts).tolist()) == [0, 2, 3, 4]


# ---------------------------------------------------------------- MAP and files

@pytest.mark.parametrize("p,race,tied", [
    ((0.1, 0.7, 0.1, 0.05, 0.05), RaceCategory.BLACK, False),
    ((0.5, 0.5, 0, 0, 0), RaceCategory.WHITE, True),
])
def test_map_classify(p, race, tied):
    assert map_classify(p) == (race, tied)


def test_predictions_round_trip(tmp_path, two_race_dicts, small_geo):
    recs = [make_record(str(i), "SMITH" if i % 2 else "JONES", "A") for i in range(4)]
    out = bisg_predict(recs, two_race_dicts, small_geo)
    buf = io.StringIO()
    write_predictions(out, buf)
    assert buf.getvalue().splitlines()[0] == ",".join(PREDICTION_HEADER)
    p = tmp_path / "pred.csv"
    p.write_text(buf.getvalue())
    back = read_predictions(p)
    assert back.record_ids == out.record_ids and back.method == "bisg"
    np.testing.assert_array_equal(back.probs, out.probs)
    np.testing.assert_array_equal(back.matched, out.matched)


def test_prediction_set_views(two_race_dicts, small_geo):
    recs = [make_record(str(i), "SMITH", "A") for i in range(4)]
    out = bisg_predict(recs, two_race_dicts, small_geo)
    assert isinstance(out[0].probs, np.ndarray) and len(out[1:3]) == 2
    both = PredictionSet.concat([out.subset([0, 1]), out.subset([2, 3])])
    np.testing.assert_array_equal(both.probs, out.probs)
