"""Command-line entry point: synth, clean, train, predict and eval."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import FUSIONS, QUANTIZERS, ConfigError, RunConfig, dump_config, load_config
from .domain import LABEL_NAMES, DataError, InvariantError
from .evaluation import (
    METHODS,
    chrono_split,
    evaluate,
    predict_in_context,
    run_grid,
    stream_evaluate,
    user_days,
)
from .features import StopArrays
from .fusion import FusionModel
from .ingest import (
    clean,
    flatten_days,
    load_poi_mapping,
    parse_pois,
    parse_profiles,
    parse_stops,
    write_stops,
)

log = logging.getLogger("actrec")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- input loading -------------------------------------------------------------------

def _require(cfg: RunConfig, *names):
    missing = [n for n in names if not getattr(cfg, n)]
    if missing:
        raise UsageError(f"missing input path(s): {', '.join(missing)} (set them in --config or by flag)")


def load_inputs(cfg: RunConfig, need_stops: bool = True):
    """Parse profiles, POIs and (optionally) stops named by the config."""
    _require(cfg, "profiles", "pois", "poi_mapping", *(["stops"] if need_stops else []))
    proj = cfg.projection
    profiles = parse_profiles(cfg.profiles, proj, cfg.age_breaks)
    pois = parse_pois(cfg.pois, load_poi_mapping(cfg.poi_mapping), proj)
    stops = parse_stops(cfg.stops, proj) if need_stops else None
    return stops, profiles, pois


def cleaned_arrays(cfg: RunConfig):
    stops, profiles, pois = load_inputs(cfg)
    days, report = clean(stops, profiles, cfg.bounding_box)
    kept = flatten_days(days)
    if not kept:
        raise DataError("no stops survive cleaning")
    return StopArrays.from_stops(kept), profiles, pois, report


def first_k_days(stops: StopArrays, k: int) -> StopArrays:
    days = user_days(stops)
    short = [u for u, d in days.items() if len(d) < k]
    for u in short:
        log.warning("user %s has only %d day(s), fewer than k=%d; excluded", u, len(days[u]), k)
    keep = {u: set(d[:k]) for u, d in days.items() if len(d) >= k}
    rows = [i for i, (u, d) in enumerate(zip(stops.user, stops.day)) if u in keep and d in keep[u]]
    if not rows:
        raise DataError(f"no user has {k} cleaned days")
    return stops.take(rows)


def bayes_hook(truth_path):
    """Bayes-rate function over test stops, from a synthetic truth file."""
    from .synth import bayes_accuracy

    with open(truth_path) as fh:
        truth = json.load(fh)
    place = {(u, int(t)): p for (u, t), p in zip(truth["stop_keys"], truth["stop_place_types"])}

    def rate(test: StopArrays):
        types = [place.get((u, int(t))) for u, t in zip(test.user, test.t_start)]
        if any(t is None for t in types):
            log.warning("truth file does not cover every test stop; Bayes rate omitted")
            return None
        return bayes_accuracy(types)

    return rate


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- commands --------------------------------------------------------------------------

def cmd_synth(args, cfg: RunConfig) -> int:
    from .synth import SynthConfig, generate, write_dataset

    sc = SynthConfig(n_users=args.users, days_per_user=args.days, seed=args.seed if args.seed is not None else 0)
    stops, profiles, pois, truth = generate(sc)
    out = write_dataset(args.out, stops, profiles, pois, truth)
    dump_config(cfg.replace(stops="stops.csv", profiles="profiles.csv", pois="pois.csv",
                            poi_mapping="poi_mapping.json", seed=sc.seed), out / "config.yaml")
    print(f"wrote {len(stops)} stops, {len(profiles)} profiles and {len(pois)} POIs to {out}")
    return EXIT_OK


def cmd_clean(args, cfg: RunConfig) -> int:
    stops, profiles, _ = load_inputs(cfg)
    days, report = clean(stops, profiles, cfg.bounding_box)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_stops(out / "stops_clean.csv", flatten_days(days))
    _write_json(out / "cleaning_report.json", {"config": cfg.to_dict(), "report": report.to_dict()})
    print(f"kept {report.points_kept}/{report.total_points} stops over {report.days_kept} user-days")
    for rule, n in report.discarded_points.items():
        if n:
            print(f"  discarded {n:>6d}  {rule}")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    stops, profiles, pois, cleaning = cleaned_arrays(cfg)
    if args.k is not None:
        stops = first_k_days(stops, args.k)
    model = FusionModel.fit(stops, profiles, pois, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    report = {"config": cfg.to_dict(), "cleaning": cleaning.to_dict(), "training": model.report,
              "k": args.k, "users": len(set(stops.user))}
    _write_json(out.with_suffix(".report.json"), report)
    print(f"trained {len(model.populations)} population models on {len(stops)} stops -> {out}")
    return EXIT_OK


def cmd_predict(args, cfg: RunConfig) -> int:
    model = FusionModel.load(args.bundle)
    strategy = args.fusion or model.config.fusion
    proj = model.config.projection
    raw = [s for s in parse_stops(args.stops, proj)]
    unknown = sorted({s.user_id for s in raw} - set(model.profiles))
    if unknown:
        raise DataError(f"no profile in the bundle for user(s): {', '.join(unknown[:5])}")
    query = StopArrays.from_stops(raw, with_labels=False)
    history = model.populations["cross_user=*"].stats.train
    preds, scores = predict_in_context(model, query, history, [strategy])
    fused = model.fused_scores(scores, len(query), strategy)
    seen = model.trained_users
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "lon", "lat", "t_start", "t_end", "predicted", "strategy", "seen"]
                   + [f"score_{n}" for n in LABEL_NAMES])
        for i, s in enumerate(raw):
            w.writerow([s.user_id, f"{s.lon:.7f}", f"{s.lat:.7f}", s.t_start, s.t_end,
                        LABEL_NAMES[preds[strategy][i]], strategy, int(s.user_id in seen)]
                       + [f"{v:.6f}" for v in fused[i]])
    print(f"wrote {len(raw)} predictions ({strategy}) to {args.out}")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    from . import plotting

    stops, profiles, pois, cleaning = cleaned_arrays(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bayes = bayes_hook(args.truth) if args.truth else None
    ks = [args.k] if args.k is not None else [1, 2, 3, 4]

    if args.grid:
        rows = []
        for k in ks:
            rows += run_grid(stops, profiles, pois, cfg, k, jobs=cfg.jobs)
        _write_json(out / "grid.json", {"config": cfg.to_dict(), "results": rows})
        with open(out / "grid.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
        for r in rows:
            param = {"grid": f"cell={r['cell_width']:g}m", "voronoi": f"k={r['n_clusters']}",
                     "circular": f"r={r['radius']:g}m"}[r["quantizer"]]
            print(f"{r['quantizer']:<9}{param:<12}slot={r['slot_minutes']:<4d}k={r['k']}  "
                  f"16-class {100 * r['acc16']:6.2f}%  4-class {100 * r['acc4']:6.2f}%")
        return EXIT_OK

    if args.mode == "stream":
        rep = stream_evaluate(stops, profiles, pois, cfg)
        _write_json(out / "stream.json", {"config": cfg.to_dict(), "cleaning": cleaning.to_dict(), **rep.to_dict()})
        (out / "stream_accumulative.csv").write_text(rep.curve_csv())
        (out / "stream_buckets.csv").write_text(rep.bucket_csv())
        plotting.plot_stream(rep, out / "stream_accumulative.png")
        plotting.plot_buckets(rep, out / "stream_buckets.png")
        print(rep.curve_csv(), end="")
        print(f"final accumulative accuracy: seen {_pct(rep.final_seen)}, unseen {_pct(rep.final_unseen)}")
        return EXIT_OK

    reports, curve = [], []
    text = []
    for k in ks:
        split = chrono_split(stops, k)
        rep = evaluate(stops, split, profiles, pois, cfg, bayes(stops.take(split.test_rows)) if bayes else None)
        reports.append(rep.to_dict())
        text.append(rep.to_text())
        curve.append({"k": k, "acc": {m.method: m.acc16 for m in rep.methods},
                      "majority": rep.majority_accuracy, "bayes": rep.bayes_rate})
        plotting.plot_confusion(rep.confusion16, out / f"confusion16_k{k}.png")
        plotting.plot_confusion(rep.confusion4, out / f"confusion4_k{k}.png")
    _write_json(out / "chrono.json", {"config": cfg.to_dict(), "cleaning": cleaning.to_dict(), "reports": reports})
    (out / "chrono.txt").write_text("\n\n".join(text) + "\n")
    with open(out / "accuracy_by_k.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k"] + [m for m in METHODS if m in curve[0]["acc"]] + ["majority", "bayes_rate"])
        for c in curve:
            w.writerow([c["k"]] + [f"{c['acc'][m]:.6f}" for m in METHODS if m in c["acc"]]
                       + [f"{c['majority']:.6f}", "" if c["bayes"] is None else f"{c['bayes']:.6f}"])
    if len(curve) > 1:
        plotting.plot_accuracy_vs_k(curve, out / "accuracy_by_k.png", methods=["wmv", "score_stack", "cross_user"])
    print("\n\n".join(text))
    return EXIT_OK


def _pct(v):
    return "-" if v is None else f"{100 * v:.2f}%"


# -- argument parsing -------------------------------------------------------------------

OVERRIDES = {
    # flag: (config key, type)
    "--stops": ("stops", str), "--profiles": ("profiles", str), "--pois": ("pois", str),
    "--poi-mapping": ("poi_mapping", str),
    "--quantizer": ("quantizer", str), "--cell-size": ("cell_size", float), "--clusters": ("n_clusters", int),
    "--radius": ("radius", float), "--slot-minutes": ("slot_minutes", int),
    "--ensemble-mode": ("ensemble_mode", str), "--n-trees": ("n_trees", int), "--min-leaf": ("min_leaf", int),
    "--seed": ("seed", int), "--jobs": ("jobs", int), "--warmup-days": ("warmup_days", int),
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("-v", "--verbose", action="store_true")
    for flag, (key, typ) in OVERRIDES.items():
        kw = {"choices": QUANTIZERS} if key == "quantizer" else {}
        common.add_argument(flag, dest=key, type=typ, default=None, **kw)

    p = _Parser(prog="actrec", description="Trip purpose recognition from GPS stops, POIs and demographics.")
    p.add_argument("--version", action="version", version=f"actrec {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic city and travel diaries")
    s.add_argument("--out", required=True)
    s.add_argument("--users", type=int, default=50)
    s.add_argument("--days", type=int, default=10)

    s = sub.add_parser("clean", parents=[common], help="apply the cleaning rules")
    s.add_argument("--out", required=True)

    s = sub.add_parser("train", parents=[common], help="train a fusion model bundle")
    s.add_argument("--out", required=True, help="bundle path (JSON)")
    s.add_argument("--k", type=int, help="train on each user's first k days only")
    s.add_argument("--fusion", choices=FUSIONS)

    s = sub.add_parser("predict", parents=[common], help="predict activities for a stops file")
    s.add_argument("--bundle", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--fusion", choices=FUSIONS)

    s = sub.add_parser("eval", parents=[common], help="chronological, streaming or grid evaluation")
    s.add_argument("--out", required=True, help="report directory")
    s.add_argument("--mode", choices=("chrono", "stream"), default="chrono")
    s.add_argument("--k", type=int, help="training days per user (default: 1 to 4)")
    s.add_argument("--grid", action="store_true", help="sweep the quantizer and time-slot grids")
    s.add_argument("--truth", help="synthetic truth file; adds the Bayes rate to reports")
    s.add_argument("--fusion", choices=FUSIONS)
    return p


def resolve_config(args) -> RunConfig:
    overrides = {key: getattr(args, key, None) for key, _ in OVERRIDES.values()}
    size = overrides.pop("cell_size")
    if size is not None:
        overrides["cell_width"] = overrides["cell_height"] = size
    if getattr(args, "fusion", None) and args.command != "predict":
        overrides["fusion"] = args.fusion
    return load_config(args.config, overrides)


COMMANDS = {"synth": cmd_synth, "clean": cmd_clean, "train": cmd_train, "predict": cmd_predict, "eval": cmd_eval}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if getattr(args, "k", None) is not None and args.k < 1:
            raise UsageError("--k must be >= 1")
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InvariantError as exc:
        print(f"internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
