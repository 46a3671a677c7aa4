"""AUROC, calibration curves and MAP error tables, optionally by stratum."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np
from scipy.stats import rankdata

from .core import J, RACES


class DegenerateLabelsError(ValueError):
    """AUROC needs at least one positive and one negative."""


def auroc(scores, labels) -> float:
    """Area under the ROC curve via the rank-sum (Mann-Whitney) statistic.

    Tied scores get average ranks, which counts a tied positive/negative
    pair as one half.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=bool)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError("AUROC needs both positive and negative labels")
    ranks = rankdata(s, method="average")
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def calibration_curve(scores, labels, bins: int = 10) -> list[tuple[float, float, int]]:
    """Equal-width reliability bins on [0, 1]; empty bins are omitted.

    Returns ``(mean_predicted, observed_share, count)`` per nonempty bin,
    in increasing bin order.  A score of exactly 1 falls in the last bin.
    """
    if bins < 2:
        raise ValueError("bins must be at least 2")
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=float)
    which = np.clip(np.floor(s * bins).astype(np.int64), 0, bins - 1)
    count = np.bincount(which, minlength=bins)
    ssum = np.bincount(which, weights=s, minlength=bins)
    ysum = np.bincount(which, weights=y, minlength=bins)
    return [(float(ssum[b] / count[b]), float(ysum[b] / count[b]), int(count[b]))
            for b in range(bins) if count[b] > 0]


def confusion_matrix(true_races, predicted_races) -> np.ndarray:
    t = np.asarray(true_races, dtype=np.int64)
    p = np.asarray(predicted_races, dtype=np.int64)
    cm = np.zeros((J, J), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def _rates(t: np.ndarray, p: np.ndarray, race_mask: Optional[np.ndarray] = None) -> dict:
    """FNR/FPR per race and overall error.

    `race_mask[i, r]` says whether record i is scored for race r; the
    overall error uses the record's own race column.
    """
    n = t.size
    if race_mask is None:
        race_mask = np.ones((n, J), dtype=bool)
    out = {}
    for r, name in enumerate(RACES):
        m = race_mask[:, r]
        pos = m & (t == r)
        neg = m & (t != r)
        fnr = float(np.mean(p[pos] != r)) if pos.any() else None
        fpr = float(np.mean(p[neg] == r)) if neg.any() else None
        out[name] = {"false_negative_rate": fnr, "false_positive_rate": fpr,
                     "n_positive": int(pos.sum()), "n_negative": int(neg.sum())}
    own = race_mask[np.arange(n), t] if n else np.zeros(0, bool)
    out["overall_error_rate"] = float(np.mean(p[own] != t[own])) if own.any() else None
    out["n"] = int(own.sum())
    return out


def error_table(predicted_races, true_races, strata=None) -> dict:
    """MAP error rates, overall and per stratum.

    `strata` is either one label per record, or an (n, J) array giving
    each record a label per race (a race-specific stratification, used
    for the zero-count split).  A rate with no eligible records is None.
    Returns ``{"all": rates, <stratum>: rates, ...}``.
    """
    t = np.asarray(true_races, dtype=np.int64)
    p = np.asarray(predicted_races, dtype=np.int64)
    if t.shape != p.shape:
        raise ValueError("predictions and truth differ in length")
    report = {"all": _rates(t, p)}
    if strata is None:
        return report
    st = np.asarray(strata, dtype=object)
    if st.ndim == 1:
        st = np.repeat(st[:, None], J, axis=1)
    for label in sorted({str(x) for x in st.ravel()}):
        report[label] = _rates(t, p, st.astype(str) == label)
    return report


def zero_count_strata(zero_mask, true_races) -> tuple[np.ndarray, np.ndarray]:
    """Stratifications for the zero-count diagnostic.

    Returns ``(auroc_strata, error_strata)``, both (n, J).  For AUROC a
    record is in the "zero" stratum of race r whenever the census counts no
    one of race r in its geography.  For error rates only the race's own
    members are moved: record i is "zero" for race r iff its true race is r
    and that count is zero, so false positives are always scored in the
    "nonzero" stratum.
    """
    z = np.asarray(zero_mask, dtype=bool)
    t = np.asarray(true_races, dtype=np.int64)
    auroc_strata = np.where(z, "zero", "nonzero")
    own = np.zeros_like(z)
    own[np.arange(len(t)), t] = z[np.arange(len(t)), t]
    error_strata = np.where(own, "zero", "nonzero")
    return auroc_strata, error_strata


@dataclass
class EvalReport:
    """Metrics for one prediction set (optionally one stratum)."""

    auroc: dict
    calibration: dict
    errors: dict
    n: int
    strata: Optional[str] = None

    def to_dict(self) -> dict:
        """Race -> metric layout; per-stratum values sit under ``"strata"``."""
        out = {"n": self.n, "stratification": self.strata,
               "overall_error_rate": self.errors["all"]["overall_error_rate"]}
        labels = sorted(set(self.auroc) | set(self.errors))
        for race in RACES:
            entry = {
                "auroc": self.auroc["all"][race],
                "false_negative_rate": self.errors["all"][race]["false_negative_rate"],
                "false_positive_rate": self.errors["all"][race]["false_positive_rate"],
                "calibration": [list(p) for p in self.calibration[race]],
            }
            strata = {}
            for label in labels:
                if label == "all":
                    continue
                err = self.errors.get(label, {}).get(race, {})
                strata[label] = {
                    "auroc": self.auroc.get(label, {}).get(race),
                    "false_negative_rate": err.get("false_negative_rate"),
                    "false_positive_rate": err.get("false_positive_rate"),
                }
            if strata:
                entry["strata"] = strata
            out[race] = entry
        if len(labels) > 1:
            out["stratum_overall_error_rate"] = {
                k: v["overall_error_rate"] for k, v in self.errors.items() if k != "all"}
        return out


def _safe_auroc(s, y):
    try:
        return auroc(s, y)
    except DegenerateLabelsError:
        return None


def evaluate(probs, true_races, strata=None, bins: int = 10, strata_name: Optional[str] = None,
             auroc_strata=None) -> EvalReport:
    """Full metric suite for a set of probability predictions.

    `strata` drives the error-table split; `auroc_strata` (defaulting to
    `strata`) drives per-stratum AUROC.  Either may be 1-D or (n, J).
    """
    probs = np.asarray(probs, dtype=float).reshape(-1, J)
    t = np.asarray(true_races, dtype=np.int64)
    pred = np.argmax(probs, axis=1)
    au = {"all": {}}
    cal = {}
    for r, name in enumerate(RACES):
        au["all"][name] = _safe_auroc(probs[:, r], t == r)
        cal[name] = calibration_curve(probs[:, r], t == r, bins)
    a_strata = strata if auroc_strata is None else auroc_strata
    if a_strata is not None:
        st = np.asarray(a_strata, dtype=object)
        if st.ndim == 1:
            st = np.repeat(st[:, None], J, axis=1)
        st = st.astype(str)
        for label in sorted(set(st.ravel())):
            au[label] = {}
            for r, name in enumerate(RACES):
                m = st[:, r] == label
                au[label][name] = _safe_auroc(probs[m, r], t[m] == r) if m.any() else None
    errors = error_table(pred, t, strata)
    return EvalReport(auroc=au, calibration=cal, errors=errors, n=int(t.size), strata=strata_name)


def write_metrics_json(nested: Mapping, path) -> None:
    """`nested` is method -> scheme -> EvalReport."""
    doc = {m: {s: rep.to_dict() for s, rep in by.items()} for m, by in nested.items()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def flat_metric_rows(nested: Mapping) -> list[list]:
    rows = []
    for method, by in sorted(nested.items()):
        for scheme, rep in sorted(by.items()):
            for stratum, per_race in sorted(rep.auroc.items()):
                for race in RACES:
                    rows.append([method, scheme, stratum, race, "auroc", per_race.get(race)])
            for stratum, rates in sorted(rep.errors.items()):
                for race in RACES:
                    for metric in ("false_negative_rate", "false_positive_rate"):
                        rows.append([method, scheme, stratum, race, metric, rates[race][metric]])
                rows.append([method, scheme, stratum, "all", "overall_error_rate",
                             rates["overall_error_rate"]])
    return rows


def write_metrics_csv(nested: Mapping, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "scheme", "stratum", "race", "metric", "value"])
        for row in flat_metric_rows(nested):
            w.writerow(row[:-1] + ["" if row[-1] is None else repr(float(row[-1]))])


def write_calibration_csv(nested: Mapping, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "scheme", "race", "mean_predicted", "observed_share", "count"])
        for method, by in sorted(nested.items()):
            for scheme, rep in sorted(by.items()):
                for race in RACES:
                    for mp, obs, cnt in rep.calibration[race]:
                        w.writerow([method, scheme, race, repr(mp), repr(obs), cnt])
