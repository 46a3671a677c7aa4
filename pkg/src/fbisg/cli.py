"""``fbisg`` command line: build-dict, predict, eval, simulate, diagnose."""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import synth
from .core import J, NAME_FIELD_ALIASES, RACES, FbisgError, SamplerConfig
from .evaluation import (evaluate, write_calibration_csv, write_metrics_csv, write_metrics_json,
                         zero_count_strata)
from .fileio import finish_manifest, read_records, start_manifest, write_records
from .geo import load_geo_counts, write_geo_counts, zero_block_mask, zero_count_summary
from .inference import bisg_predict, read_predictions, run_fbisg, write_predictions
from .names import (CENSUS_SURNAME_HEADER, COVERAGE_SCHEMES, DictionarySet, build_dictionary,
                    coverage_report, load_census_surname_file, load_spanish_surname_file, merge_dictionaries,
                    read_dictionary, write_dictionary)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3


class UsageError(Exception):
    pass


def _log(msg: str) -> None:
    print(f"fbisg: {msg}", file=sys.stderr)


def _manifest_path(output: str, explicit: str | None) -> str | None:
    if explicit:
        return explicit
    if output in (None, "-"):
        return None
    return str(output) + ".manifest.json"


def _options(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}


# ---------------------------------------------------------------------------

def cmd_build_dict(args, argv) -> int:
    if not args.labeled and not args.census_surnames:
        raise UsageError("build-dict needs --labeled and/or --census-surnames")
    holdout = set(args.holdout_source or [])
    inputs = list(args.labeled or []) + [args.census_surnames, args.spanish_surnames, args.geo_counts]
    manifest = start_manifest(argv, _options(args), inputs)
    records = []
    used_sources = []
    for path in args.labeled or []:
        source = Path(path).stem
        if source in holdout:
            _log(f"holding out source {source}")
            continue
        recs = read_records(path, require_race=True)
        used_sources.append(source)
        records.extend(recs)

    national = None
    if args.national_counts:
        national = np.asarray([float(x) for x in args.national_counts.split(",")])
        if national.shape != (J,):
            raise UsageError("--national-counts needs five comma-separated values")
    elif args.geo_counts:
        national = load_geo_counts(args.geo_counts).totals.astype(float)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    surname = None
    if args.census_surnames:
        if national is None:
            raise UsageError("census surnames need --geo-counts or --national-counts")
        surname = load_census_surname_file(args.census_surnames, national)
        rep = surname.provenance["report"]
        _log(f"census surnames: {len(surname)} names, {rep.rows_skipped} rows skipped, "
             f"{len(rep.flagged)} flagged")
    if args.spanish_surnames:
        spanish = load_spanish_surname_file(args.spanish_surnames, default_weight=args.spanish_weight)
        surname = spanish if surname is None else merge_dictionaries(surname, spanish)
    written = []
    if records:
        labeled = {k: build_dictionary(records, k, source="+".join(used_sources))
                   for k in ("surname", "first", "middle")}
        surname = labeled["surname"] if surname is None else merge_dictionaries(surname, labeled["surname"])
        for k in ("first", "middle"):
            write_dictionary(labeled[k], out / f"{k}.csv")
            written.append(out / f"{k}.csv")
    elif args.labeled:
        raise FbisgError("every labeled source was held out; nothing to build from")
    write_dictionary(surname, out / "surname.csv")
    written.append(out / "surname.csv")
    _log(f"wrote {', '.join(str(p) for p in written)}")
    finish_manifest(manifest, written, out / "manifest.json")
    return EXIT_OK


def _sampler_config(args) -> SamplerConfig:
    alpha = [float(a) for a in str(args.alpha).split(",")]
    return SamplerConfig(
        iterations_total=args.iterations, burn_in=args.burnin,
        alpha=tuple(alpha * J if len(alpha) == 1 else alpha), seed=args.seed,
        posterior_estimator=args.estimator, name_fields=NAME_FIELD_ALIASES[args.names],
        parallel_partitions=args.partitions, init=args.init)


def cmd_predict(args, argv) -> int:
    geo_path = args.geo_counts or os.environ.get("FBISG_GEO_COUNTS")
    dict_dir = args.dict_dir or os.environ.get("FBISG_DICT_DIR")
    if not geo_path or not dict_dir or not args.input:
        raise UsageError("predict needs --geo-counts, --dict-dir and --input")
    config = _sampler_config(args)
    inputs = [geo_path, *args.input] + [str(p) for p in sorted(Path(dict_dir).glob("*.csv"))]
    manifest = start_manifest(argv, _options(args), inputs, seed=config.seed)
    table = load_geo_counts(geo_path)
    dicts = DictionarySet.load(dict_dir)
    records = [r for path in args.input for r in read_records(path)]
    if args.method == "bisg":
        preds = bisg_predict(records, dicts, table, config.name_fields)
    else:
        preds = run_fbisg(records, dicts, table, config, backend=args.backend,
                          progress=not args.quiet)
    if preds.excluded:
        kinds = {}
        for _, why in preds.excluded:
            kinds[why] = kinds.get(why, 0) + 1
        _log("excluded records: " + ", ".join(f"{k}={v}" for k, v in sorted(kinds.items())))
    if args.output == "-":
        write_predictions(preds, sys.stdout)
        sys.stdout.flush()
    else:
        with open(args.output, "w", newline="", encoding="utf-8") as fh:
            write_predictions(preds, fh)
    mpath = _manifest_path(args.output, args.manifest)
    if mpath:
        finish_manifest(manifest, [args.output], mpath)
    return EXIT_OK


def _parse_prediction_arg(text: str) -> tuple[str, str]:
    scheme, sep, path = text.partition("=")
    if not sep:
        return "default", text
    return scheme, path


def cmd_eval(args, argv) -> int:
    if not args.predictions or not args.truth:
        raise UsageError("eval needs --predictions and --truth")
    if args.strata == "zero_count" and not args.geo_counts:
        raise UsageError("--strata zero_count needs --geo-counts")
    pred_args = [_parse_prediction_arg(p) for p in args.predictions]
    inputs = [p for _, p in pred_args] + list(args.truth) + [args.geo_counts]
    manifest = start_manifest(argv, _options(args), inputs)
    truth = {}
    geo_of = {}
    for path in args.truth:
        for r in read_records(path):
            if r.true_race is not None:
                truth[r.record_id] = int(r.true_race)
            geo_of[r.record_id] = r.geo_id
    table = load_geo_counts(args.geo_counts) if args.geo_counts else None
    nested: dict = {}
    for scheme, path in pred_args:
        preds = read_predictions(path)
        missing = [rid for rid in preds.record_ids if rid not in truth]
        if missing:
            raise FbisgError(f"{path}: {len(missing)} predictions have no true race "
                             f"(first: {missing[0]!r})")
        t = np.asarray([truth[rid] for rid in preds.record_ids], dtype=np.int64)
        strata = auroc_strata = None
        if args.strata == "zero_count":
            gidx = table.resolve(geo_of[rid] for rid in preds.record_ids)
            if np.any(gidx < 0):
                raise FbisgError("some predicted records have geographies missing from --geo-counts")
            auroc_strata, strata = zero_count_strata(zero_block_mask(table, gidx), t)
        elif args.strata == "name_match":
            strata = np.where(preds.matched[:, 0], "matched", "unmatched")
        report = evaluate(preds.probs, t, strata=strata, bins=args.bins,
                          strata_name=None if args.strata == "none" else args.strata,
                          auroc_strata=auroc_strata)
        nested.setdefault(preds.method, {})[scheme] = report
    outputs = []
    if args.output == "-":
        doc = {m: {s: rep.to_dict() for s, rep in by.items()} for m, by in nested.items()}
        json.dump(doc, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    else:
        write_metrics_json(nested, args.output)
        outputs.append(args.output)
    if args.csv:
        write_metrics_csv(nested, args.csv)
        outputs.append(args.csv)
    if args.calibration_csv:
        write_calibration_csv(nested, args.calibration_csv)
        outputs.append(args.calibration_csv)
    mpath = _manifest_path(args.output, args.manifest)
    if mpath:
        finish_manifest(manifest, outputs, mpath)
    return EXIT_OK


PRESETS = {
    "default": lambda: synth.SynthConfig(),
    "pathology": lambda: synth.pathology_config(),
    "clean": lambda: synth.SynthConfig(),
}


def write_census_surname_file(d, path) -> None:
    """Emit a dictionary in the Census surname layout (Other in pctaian)."""
    totals = d.counts.sum(axis=1)
    order = np.argsort(-totals, kind="stable")
    grand = totals.sum() if totals.sum() > 0 else 1.0
    cum = 0.0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CENSUS_SURNAME_HEADER)
        for rank, k in enumerate(order, start=1):
            share = 1e5 * totals[k] / grand
            cum += share
            pct = 100.0 * d.p_race_given_name[k]
            w.writerow([d.keys[k], rank] + [repr(float(x)) for x in (
                totals[k], share, cum, pct[0], pct[1], pct[3], pct[4])] + ["0", repr(float(pct[2]))])


def cmd_simulate(args, argv) -> int:
    if args.config_file:
        with open(args.config_file, encoding="utf-8") as fh:
            cfg = synth.SynthConfig.from_dict(json.load(fh))
    else:
        cfg = PRESETS[args.preset]()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.n_geographies is not None:
        overrides["n_geographies"] = args.n_geographies
    if args.n_sources is not None:
        overrides["n_sources"] = args.n_sources
    if overrides:
        cfg = replace(cfg, **overrides)
    out = Path(args.out_dir)
    (out / "labeled").mkdir(parents=True, exist_ok=True)
    (out / "full_dicts").mkdir(parents=True, exist_ok=True)
    manifest = start_manifest(argv, {**_options(args), "synth": cfg.to_dict()},
                              [args.config_file], seed=cfg.seed)

    pop = synth.generate_population(cfg)
    observed = synth.corrupt_census(pop.true_table, cfg)
    public, censor = synth.censor_dictionary(pop.dictionaries.surname, cfg)
    written = []
    write_geo_counts(pop.true_table, out / "geo_counts_true.csv")
    write_geo_counts(observed, out / "geo_counts.csv")
    written += [out / "geo_counts_true.csv", out / "geo_counts.csv"]
    for src in pop.sources:
        p = out / "labeled" / f"{src}.csv"
        write_records(pop.records_for_source(src), p)
        written.append(p)
    pop.dictionaries.save(out / "full_dicts")
    written += sorted((out / "full_dicts").glob("*.csv"))
    write_dictionary(public, out / "public_surname.csv")
    write_census_surname_file(public, out / "census_surnames.csv")
    written += [out / "public_surname.csv", out / "census_surnames.csv"]

    zs = zero_count_summary(observed, pop.records)
    cov = coverage_report({"census_last": public}, pop.records, "census_last")
    truth = {
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "n_records": len(pop.records),
        "n_people": int(pop.true_table.counts.sum()),
        "zeta_mean": dict(zip(RACES, pop.zeta.mean(axis=0).round(6).tolist())),
        "zeta_quantiles": {q: dict(zip(RACES, np.quantile(pop.zeta, q, axis=0).round(6).tolist()))
                           for q in (0.1, 0.5, 0.9)},
        "zero_count_share": {r: zs[r]["share"] for r in RACES},
        "census_last_unmatched": dict(zip(RACES, cov["unmatched_fraction"].tolist())),
        "hidden_surname_mass": dict(zip(RACES, censor.removed_mass.tolist())),
    }
    with open(out / "ground_truth.json", "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(out / "ground_truth.json")
    _log(f"simulated {len(pop.records)} records in {cfg.n_geographies} geographies -> {out}")
    finish_manifest(manifest, written, out / "manifest.json")
    return EXIT_OK


def cmd_diagnose(args, argv) -> int:
    if not args.input:
        raise UsageError("diagnose needs --input")
    records = [r for p in args.input for r in read_records(p, require_race=True)]
    report = {}
    if args.report in ("zero_count", "all"):
        if not args.geo_counts:
            raise UsageError("zero-count diagnostics need --geo-counts")
        table = load_geo_counts(args.geo_counts)
        known = [r for r in records if r.geo_id in table]
        report["unknown_geography"] = len(records) - len(known)
        report["zero_count"] = zero_count_summary(table, known)
    if args.report in ("coverage", "all"):
        dicts = {}
        if args.census_dict:
            dicts["census_last"] = read_dictionary(args.census_dict, "surname")
        if args.dict_dir:
            ds = DictionarySet.load(args.dict_dir)
            dicts.update(augmented_last=ds.surname, first=ds.first, middle=ds.middle)
        report["coverage"] = {}
        for scheme in COVERAGE_SCHEMES:
            cov = coverage_report(dicts, records, scheme)
            report["coverage"][scheme] = {
                r: (None if np.isnan(f) else float(f))
                for r, f in zip(RACES, cov["unmatched_fraction"])}
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.output in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.output).write_text(text, encoding="utf-8")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fbisg", description=__doc__)
    p.add_argument("--config", help="JSON file of option defaults; flags override it")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build-dict", help="build name dictionaries")
    b.add_argument("--labeled", nargs="+", help="labeled record CSVs; file stem = source label")
    b.add_argument("--census-surnames", help="Census surname CSV (2010 layout)")
    b.add_argument("--spanish-surnames", help="Spanish surname list CSV")
    b.add_argument("--spanish-weight", type=float, default=100.0)
    b.add_argument("--geo-counts", help="geo counts CSV; its totals give national race counts")
    b.add_argument("--national-counts", help="five comma-separated national race counts")
    b.add_argument("--holdout-source", action="append", help="source label to leave out")
    b.add_argument("--out-dir", required=True)
    b.set_defaults(func=cmd_build_dict)

    q = sub.add_parser("predict", help="predict race probabilities")
    q.add_argument("--method", choices=("bisg", "fbisg"), default="fbisg")
    q.add_argument("--names", choices=("last", "last+first", "last+first+middle"), default="last")
    q.add_argument("--iterations", type=int, default=1500)
    q.add_argument("--burnin", type=int, default=500)
    q.add_argument("--alpha", default="1.0", help="one value or five comma-separated values")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--partitions", type=int, default=1)
    q.add_argument("--estimator", choices=("label_frequency", "rao_blackwell"),
                   default="label_frequency")
    q.add_argument("--init", choices=("map", "sample"), default="map")
    q.add_argument("--backend", choices=("compiled", "python"), default=None)
    q.add_argument("--geo-counts")
    q.add_argument("--dict-dir")
    q.add_argument("--input", nargs="+")
    q.add_argument("--output", default="-")
    q.add_argument("--manifest", help="manifest path (default: <output>.manifest.json)")
    q.add_argument("--quiet", action="store_true")
    q.set_defaults(func=cmd_predict)

    e = sub.add_parser("eval", help="evaluate predictions against true races")
    e.add_argument("--predictions", nargs="+", help="[SCHEME=]predictions.csv")
    e.add_argument("--truth", nargs="+", help="labeled record CSVs")
    e.add_argument("--geo-counts")
    e.add_argument("--strata", choices=("none", "zero_count", "name_match"), default="none")
    e.add_argument("--bins", type=int, default=10)
    e.add_argument("--output", default="-")
    e.add_argument("--csv")
    e.add_argument("--calibration-csv")
    e.add_argument("--manifest")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("simulate", help="write a synthetic dataset")
    s.add_argument("--config-file", help="JSON synthetic-population settings")
    s.add_argument("--preset", choices=sorted(PRESETS), default="default")
    s.add_argument("--seed", type=int)
    s.add_argument("--n-geographies", type=int)
    s.add_argument("--n-sources", type=int)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_simulate)

    d = sub.add_parser("diagnose", help="zero-count and name-coverage reports")
    d.add_argument("--report", choices=("zero_count", "coverage", "all"), default="all")
    d.add_argument("--input", nargs="+")
    d.add_argument("--geo-counts")
    d.add_argument("--census-dict", help="dictionary CSV used as the census surname list")
    d.add_argument("--dict-dir", help="augmented dictionaries (surname/first/middle)")
    d.add_argument("--output", default="-")
    d.set_defaults(func=cmd_diagnose)
    return p


def _apply_config(parser, argv):
    """Re-parse with defaults taken from --config, so flags still win."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    with open(args.config, encoding="utf-8") as fh:
        cfg = json.load(fh)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    section = cfg.get(args.command, {})
    flat = {k: v for k, v in cfg.items() if not isinstance(v, dict)}
    sub.set_defaults(**{k.replace("-", "_"): v for k, v in {**flat, **section}.items()})
    return parser.parse_args(argv)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    try:
        return args.func(args, ["fbisg", *argv])
    except UsageError as exc:
        _log(f"usage error: {exc}")
        return EXIT_USAGE
    except (FbisgError, ValueError, OSError) as exc:
        _log(f"error: {exc}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
