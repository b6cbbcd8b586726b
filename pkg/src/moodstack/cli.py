"""Command-line entry point: one subcommand per stage plus a pipeline driver.

Every output directory gets a ``manifest.json`` recording the subcommand,
resolved parameters, sha256 digests of the inputs, seed, and tool version,
which is enough to replay the run. Figure outputs are CSV data files (one
per plot), not rendered images; numbers are written with shortest
round-trip float formatting so identical runs produce identical bytes.

Heavy imports happen inside the command functions so that ``--threads``
can cap the BLAS pools before numpy initializes them.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import os
import sys
from datetime import datetime, timezone

from .errors import DataError, MoodstackError, UsageError

_logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3

MANIFEST_NAME = "manifest.json"

FIGURE_FILES = {
    "fig1": "fig1_tracks_per_tag.csv",
    "fig2": "fig2_tags_per_track.csv",
    "fig3": "fig3_consistency.csv",
    "fig4": "fig4_macro_ap.csv",
    "fig5": "fig5_delta_ap.csv",
    "fig6": "fig6_ap_vs_frequency.csv",
    "fig6_fits": "fig6_fits.csv",
    "fig7": "fig7_correlation.csv",
}


# ---------------------------------------------------------------------------
# small helpers


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _cell(value) -> str:
    """One CSV cell; floats use shortest round-trip formatting."""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, (int,)):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    import numpy as np

    if isinstance(value, np.integer):
        return str(int(value))
    if isinstance(value, np.floating):
        return repr(float(value))
    return str(value)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(path, subcommand, parameters, inputs, seed, started) -> None:
    manifest = {
        "subcommand": subcommand,
        "parameters": parameters,
        "inputs": {
            name: {"path": str(p), "sha256": _sha256(p)} for name, p in inputs.items()
        },
        "seed": seed,
        "version": _version(),
        "started_at": started,
        "finished_at": _now(),
    }
    _write_json(path, manifest)


def _version() -> str:
    from . import __version__

    return __version__


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _require_file(path, producer) -> str:
    if not os.path.exists(path):
        raise DataError(f"missing artifact {path}; run `moodstack {producer}` first")
    return path


def _split_data(table, annotations, split, name):
    """Embeddings and label rows for one split, in sorted id order."""
    import numpy as np

    ids = sorted(split.ids_for(name))
    if not ids:
        raise DataError(f"split {name!r} is empty")
    x = table.matrix_for(ids)
    y = annotations.aligned_matrix(ids).astype(np.float64)
    return ids, x, y


# ---------------------------------------------------------------------------
# subcommand bodies


def run_ingest(triplets, annotations, out, splits=None, seed=0):
    from .corpus import DatasetSplit, corpus_stats, make_splits, parse_annotations, parse_triplets

    started = _now()
    matrix = parse_triplets(triplets)
    ann = parse_annotations(annotations)
    stats = corpus_stats(ann)
    matched = sorted(set(matrix.track_ids) & set(ann.track_ids))
    if not matched:
        raise DataError("no track id appears in both the triplets and the annotations")

    inputs = {"triplets": triplets, "annotations": annotations}
    if splits is not None:
        loaded = DatasetSplit.load(splits)
        matched_set = set(matched)
        kept = {
            name: frozenset(loaded.ids_for(name) & matched_set)
            for name in ("train", "val", "test")
        }
        dropped = len(loaded.all_ids) - sum(len(v) for v in kept.values())
        if dropped:
            _logger.warning("dropped %d split ids with no matched track", dropped)
        split = DatasetSplit(kept["train"], kept["val"], kept["test"])
        for part, fname in (("train", "train.txt"), ("val", "val.txt"), ("test", "test.txt")):
            inputs[f"splits/{part}"] = os.path.join(splits, fname)
    else:
        split = make_splits(matched, seed=seed)

    os.makedirs(out, exist_ok=True)
    split.save(os.path.join(out, "splits"))

    summary = stats.to_dict()
    summary.update(
        {
            "n_listeners": matrix.n_listeners,
            "n_tracks_played": matrix.n_tracks,
            "n_tracks_annotated": ann.n_tracks,
            "n_matched_tracks": len(matched),
            "total_plays": matrix.total_plays,
            "split_sizes": {
                "train": len(split.train_ids),
                "val": len(split.val_ids),
                "test": len(split.test_ids),
            },
        }
    )
    _write_json(os.path.join(out, "corpus_stats.json"), summary)

    per_split_counts = {
        name: ann.aligned_matrix(sorted(split.ids_for(name))).sum(axis=0)
        for name in ("train", "val", "test")
    }
    totals = ann.matrix.sum(axis=0)
    order = sorted(
        range(ann.n_tags), key=lambda j: (-int(totals[j]), ann.vocabulary.tags[j])
    )
    _write_csv(
        os.path.join(out, "tag_counts.csv"),
        ["tag", "total", "train", "val", "test"],
        [
            [
                ann.vocabulary.tags[j],
                int(totals[j]),
                int(per_split_counts["train"][j]),
                int(per_split_counts["val"][j]),
                int(per_split_counts["test"][j]),
            ]
            for j in order
        ],
    )
    _write_csv(
        os.path.join(out, "tags_per_track.csv"),
        ["n_tags", "n_tracks"],
        stats.tags_per_track_histogram(),
    )
    _write_manifest(
        os.path.join(out, MANIFEST_NAME),
        "ingest",
        {
            "triplets": str(triplets),
            "annotations": str(annotations),
            "splits": None if splits is None else str(splits),
            "out": str(out),
        },
        inputs,
        seed,
        started,
    )
    print(
        f"ingested {matrix.n_listeners} listeners, {matrix.n_tracks} played tracks, "
        f"{ann.n_tracks} annotated tracks ({len(matched)} matched), "
        f"{len(ann.vocabulary)} tags"
    )
    return 0


def run_factorize(triplets, out, rank=200, alpha=40.0, regularization=None, iters=15, seed=0):
    from .corpus import parse_triplets
    from .factorization import ConfidenceParams, als_fit, export_embeddings

    started = _now()
    matrix = parse_triplets(triplets)
    params = ConfidenceParams(alpha=alpha, regularization=regularization)
    model = als_fit(matrix, rank=rank, params=params, n_sweeps=iters, seed=seed)
    out_dir = os.path.dirname(os.path.abspath(out))
    os.makedirs(out_dir, exist_ok=True)
    export_embeddings(model, out)
    _write_manifest(
        out + ".manifest.json",
        "factorize",
        {
            "triplets": str(triplets),
            "rank": rank,
            "alpha": alpha,
            "regularization": model.regularization,
            "iters": iters,
            "out": str(out),
        },
        {"triplets": triplets},
        seed,
        started,
    )
    print(f"factorized {matrix.n_listeners}x{matrix.n_tracks} plays into rank-{rank} embeddings")
    return 0


def run_train(
    embeddings,
    annotations,
    splits,
    out,
    layers=2,
    units=2000,
    lr=1e-3,
    dropout=0.0,
    wd=0.0,
    epochs=100,
    warmup=1,
    batch_size=256,
    seed=0,
):
    from .corpus import DatasetSplit, parse_annotations
    from .factorization import import_embeddings
    from .mlp import MlpConfig, fit, kaiming_init, save_model

    started = _now()
    table = import_embeddings(embeddings)
    ann = parse_annotations(annotations)
    split = DatasetSplit.load(splits)
    _, train_x, train_y = _split_data(table, ann, split, "train")
    _, val_x, val_y = _split_data(table, ann, split, "val")
    config = MlpConfig(
        input_dim=table.rank,
        output_dim=ann.n_tags,
        n_layers=layers,
        n_units=units,
        learning_rate=lr,
        dropout=dropout,
        weight_decay=wd,
        epochs=epochs,
        warmup_epochs=warmup,
    )
    model = kaiming_init(config, seed=seed)
    model, log = fit(model, train_x, train_y, val_x, val_y, seed=seed, batch_size=batch_size)
    out_dir = os.path.dirname(os.path.abspath(out))
    os.makedirs(out_dir, exist_ok=True)
    save_model(model, out)
    _write_json(out + ".log.json", log.to_dict())
    _write_manifest(
        out + ".manifest.json",
        "train",
        {
            "embeddings": str(embeddings),
            "annotations": str(annotations),
            "splits": str(splits),
            "config": config.to_dict(),
            "batch_size": batch_size,
            "out": str(out),
        },
        {
            "embeddings": embeddings,
            "annotations": annotations,
            "splits/train": os.path.join(splits, "train.txt"),
            "splits/val": os.path.join(splits, "val.txt"),
            "splits/test": os.path.join(splits, "test.txt"),
        },
        seed,
        started,
    )
    print(
        f"trained {layers}x{units} model for {len(log.val_macro_ap)} epochs; "
        f"best validation macro-AP {log.best_val_macro_ap:.4f} at epoch {log.best_epoch}"
    )
    return 0


def run_evaluate(model, embeddings, annotations, splits, split_name, out):
    import numpy as np

    from .corpus import DatasetSplit, parse_annotations
    from .evaluation import RankedPredictions, macro_ap, save_report
    from .factorization import import_embeddings
    from .mlp import load_model

    started = _now()
    net = load_model(model)
    table = import_embeddings(embeddings)
    ann = parse_annotations(annotations)
    split = DatasetSplit.load(splits)
    _, x, y = _split_data(table, ann, split, split_name)
    probs = net.predict(x).astype(np.float64)
    report = macro_ap(RankedPredictions(probs, y), tags=ann.vocabulary.tags)
    save_report(report, out)
    _write_manifest(
        os.path.join(out, MANIFEST_NAME),
        "evaluate",
        {
            "model": str(model),
            "embeddings": str(embeddings),
            "annotations": str(annotations),
            "splits": str(splits),
            "split": split_name,
            "out": str(out),
        },
        {"model": model, "embeddings": embeddings, "annotations": annotations},
        None,
        started,
    )
    print(
        f"{split_name} macro-AP {report.macro_ap:.4f} over {report.n_defined} defined tags "
        f"({len(report.tags) - report.n_defined} undefined)"
    )
    return 0


def run_analyze(triplets, annotations, out, top_n=25, clusters=False, seed=0):
    from .analytics import affinity_propagation, consistency_ratios, cooccurrence, mood_similarity
    from .corpus import parse_annotations, parse_triplets

    started = _now()
    matrix = parse_triplets(triplets)
    ann = parse_annotations(annotations)
    curve = consistency_ratios(matrix, ann, top_n=top_n)
    os.makedirs(out, exist_ok=True)
    _write_csv(
        os.path.join(out, "curve.csv"),
        ["rank", "ratio"],
        [[n + 1, float(r)] for n, r in enumerate(curve.ratios)],
    )
    cooc = cooccurrence(ann)
    _write_csv(
        os.path.join(out, "cooccurrence.csv"),
        ["tag", *cooc.tags],
        [[tag, *[int(c) for c in row]] for tag, row in zip(cooc.tags, cooc.counts)],
    )
    cluster_payload = None
    if clusters:
        assignment = affinity_propagation(mood_similarity(cooc))
        members = {
            cooc.tags[k]: [cooc.tags[i] for i in sorted(idxs)]
            for k, idxs in assignment.members().items()
        }
        cluster_payload = {
            "clusters": members,
            "n_clusters": assignment.n_clusters,
            "converged": assignment.converged,
            "n_iterations": assignment.n_iterations,
        }
        _write_json(os.path.join(out, "clusters.json"), cluster_payload)
    _write_manifest(
        os.path.join(out, MANIFEST_NAME),
        "analyze",
        {
            "triplets": str(triplets),
            "annotations": str(annotations),
            "top_n": top_n,
            "clusters": clusters,
            "out": str(out),
        },
        {"triplets": triplets, "annotations": annotations},
        seed,
        started,
    )
    line = (
        f"consistency over {curve.n_listeners} listeners "
        f"({curve.n_excluded} excluded); rank-1 ratio {curve.ratio(1):.3f}"
    )
    if cluster_payload:
        line += f"; {cluster_payload['n_clusters']} mood clusters"
    print(line)
    return 0


def run_hpo(
    embeddings,
    annotations,
    splits,
    out,
    trials=None,
    seconds=None,
    seed=0,
    trial_epochs=30,
    batch_size=256,
):
    from .corpus import DatasetSplit, parse_annotations
    from .factorization import import_embeddings
    from .hpo import SearchSpace, run_search

    started = _now()
    table = import_embeddings(embeddings)
    ann = parse_annotations(annotations)
    split = DatasetSplit.load(splits)
    _, train_x, train_y = _split_data(table, ann, split, "train")
    _, val_x, val_y = _split_data(table, ann, split, "val")
    best, all_trials = run_search(
        SearchSpace(),
        train_x,
        train_y,
        val_x,
        val_y,
        out,
        budget_trials=trials,
        budget_seconds=seconds,
        seed=seed,
        trial_epochs=trial_epochs,
        batch_size=batch_size,
    )
    _write_manifest(
        out + ".manifest.json",
        "hpo",
        {
            "embeddings": str(embeddings),
            "annotations": str(annotations),
            "splits": str(splits),
            "trials": trials,
            "seconds": seconds,
            "trial_epochs": trial_epochs,
            "out": str(out),
        },
        {"embeddings": embeddings, "annotations": annotations},
        seed,
        started,
    )
    cfg = best.config
    print(
        f"{len(all_trials)} trials; best validation macro-AP {best.val_macro_ap:.4f} "
        f"(layers={cfg.n_layers} units={cfg.n_units} lr={cfg.learning_rate:.2e} "
        f"dropout={cfg.dropout} wd={cfg.weight_decay:.1e})"
    )
    return 0


def run_report(ingest_dir, eval_dirs, out, analyze_dir=None):
    """Materialize the figure-data CSVs from stage outputs.

    ``eval_dirs`` is an ordered list of (model_name, report_directory).
    """
    import numpy as np

    from .evaluation import ap_vs_frequency_regression, load_report, tagwise_correlation, tagwise_delta

    started = _now()
    if not eval_dirs:
        raise UsageError("at least one --eval NAME=DIR is required")
    names = [name for name, _ in eval_dirs]
    if len(set(names)) != len(names):
        raise UsageError("duplicate model names in --eval")

    tag_counts_path = _require_file(os.path.join(ingest_dir, "tag_counts.csv"), "ingest")
    tags_per_track_path = _require_file(os.path.join(ingest_dir, "tags_per_track.csv"), "ingest")
    inputs = {"tag_counts": tag_counts_path, "tags_per_track": tags_per_track_path}

    os.makedirs(out, exist_ok=True)
    figures: dict[str, str | None] = {}
    notes: list[str] = []

    # figs 1 and 2 restate the ingest summaries in plot-ready form
    with open(tag_counts_path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["tag", "total"]:
            raise DataError(f"unexpected tag_counts header {header!r}")
        count_rows = [(row[0], int(row[1]), int(row[2])) for row in reader]
    _write_csv(
        os.path.join(out, FIGURE_FILES["fig1"]),
        ["rank", "tag", "n_tracks"],
        [[i + 1, tag, total] for i, (tag, total, _) in enumerate(count_rows)],
    )
    figures["fig1"] = FIGURE_FILES["fig1"]
    with open(tags_per_track_path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        hist_rows = [(int(r[0]), int(r[1])) for r in reader]
    _write_csv(os.path.join(out, FIGURE_FILES["fig2"]), ["n_tags", "n_tracks"], hist_rows)
    figures["fig2"] = FIGURE_FILES["fig2"]

    if analyze_dir is not None:
        curve_path = _require_file(os.path.join(analyze_dir, "curve.csv"), "analyze")
        inputs["curve"] = curve_path
        with open(curve_path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            curve_rows = [(int(r[0]), float(r[1])) for r in reader]
        _write_csv(os.path.join(out, FIGURE_FILES["fig3"]), ["rank", "ratio"], curve_rows)
        figures["fig3"] = FIGURE_FILES["fig3"]
    else:
        figures["fig3"] = None
        notes.append("fig3 skipped: no analyze directory supplied")

    reports = {}
    for name, directory in eval_dirs:
        _require_file(os.path.join(directory, "report.csv"), "evaluate")
        reports[name] = load_report(directory)
        inputs[f"report/{name}"] = os.path.join(directory, "report.csv")

    _write_csv(
        os.path.join(out, FIGURE_FILES["fig4"]),
        ["model", "macro_ap", "n_defined_tags"],
        [[name, reports[name].macro_ap, reports[name].n_defined] for name in names],
    )
    figures["fig4"] = FIGURE_FILES["fig4"]

    delta_pair = None
    if len(names) >= 2:
        a, b = names[0], names[1]
        delta = tagwise_delta(reports[a], reports[b])
        _write_csv(
            os.path.join(out, FIGURE_FILES["fig5"]),
            ["tag", "delta_ap"],
            [[t, float(d)] for t, d in zip(delta.tags, delta.deltas)],
        )
        figures["fig5"] = FIGURE_FILES["fig5"]
        delta_pair = [a, b]
        if len(names) > 2:
            notes.append(f"fig5 compares the first two models: {a} vs {b}")
    else:
        figures["fig5"] = None
        notes.append("fig5 skipped: needs two evaluated models")

    # fig6: per-tag AP against training-set tag frequency, with an OLS fit
    train_counts = {tag: train for tag, _, train in count_rows}
    scatter_rows = []
    fit_rows = []
    for name in names:
        report = reports[name]
        freq = np.array([float(train_counts.get(t, 0)) for t in report.tags])
        try:
            fit = ap_vs_frequency_regression(report, freq)
        except DataError as exc:
            notes.append(f"fig6 fit skipped for {name}: {exc}")
            continue
        keep = report.defined_mask & (freq > 0)
        x = np.log10(freq[keep])
        lo, hi = fit.band(x)
        center = fit.predict(x)
        for tag, f_val, ap, c, l, h in zip(
            np.array(report.tags)[keep], freq[keep], report.per_tag_ap[keep], center, lo, hi
        ):
            scatter_rows.append([name, tag, int(f_val), float(ap), float(c), float(l), float(h)])
        fit_rows.append(
            [name, fit.slope, fit.intercept, fit.n_points, fit.residual_std]
        )
    if fit_rows:
        _write_csv(
            os.path.join(out, FIGURE_FILES["fig6"]),
            ["model", "tag", "train_frequency", "ap", "fit", "band_low", "band_high"],
            scatter_rows,
        )
        _write_csv(
            os.path.join(out, FIGURE_FILES["fig6_fits"]),
            ["model", "slope", "intercept", "n_points", "residual_std"],
            fit_rows,
        )
        figures["fig6"] = FIGURE_FILES["fig6"]
    else:
        figures["fig6"] = None

    if len(names) >= 2:
        matrix = tagwise_correlation([reports[n] for n in names])
        _write_csv(
            os.path.join(out, FIGURE_FILES["fig7"]),
            ["model", *names],
            [[name, *[float(v) for v in matrix[i]]] for i, name in enumerate(names)],
        )
        figures["fig7"] = FIGURE_FILES["fig7"]
    else:
        figures["fig7"] = None
        notes.append("fig7 skipped: needs two evaluated models")

    _write_json(
        os.path.join(out, "index.json"),
        {"figures": figures, "models": names, "delta_pair": delta_pair, "notes": sorted(notes)},
    )
    _write_manifest(
        os.path.join(out, MANIFEST_NAME),
        "report",
        {
            "ingest": str(ingest_dir),
            "analyze": None if analyze_dir is None else str(analyze_dir),
            "evals": {name: str(d) for name, d in eval_dirs},
            "out": str(out),
        },
        inputs,
        None,
        started,
    )
    produced = sum(1 for v in figures.values() if v)
    print(f"wrote {produced} figure data files to {out}")
    return 0


# ---------------------------------------------------------------------------
# pipeline


PIPELINE_SECTIONS = {"pipeline", "ingest", "factorize", "train", "evaluate", "analyze", "report"}
PIPELINE_KEYS = {
    "pipeline": {"workdir", "seed"},
    "ingest": {"triplets", "annotations", "splits"},
    "factorize": {"rank", "alpha", "regularization", "iters"},
    "train": {"layers", "units", "lr", "dropout", "wd", "epochs", "warmup", "batch_size"},
    "evaluate": {"split"},
    "analyze": {"top_n", "clusters"},
    "report": set(),
}
MODEL_KEYS = {"embeddings", "layers", "units", "lr", "dropout", "wd", "epochs", "warmup", "batch_size"}


def _validate_pipeline_config(cp: configparser.ConfigParser):
    for section in cp.sections():
        if section.startswith("model:"):
            if not section[len("model:") :]:
                raise UsageError(f"empty model name in section [{section}]")
            extra = set(cp[section]) - MODEL_KEYS
            if extra:
                raise UsageError(f"unknown keys in [{section}]: {sorted(extra)}")
            if "embeddings" not in cp[section]:
                raise UsageError(f"[{section}] is missing the embeddings path")
        elif section in PIPELINE_KEYS:
            extra = set(cp[section]) - PIPELINE_KEYS[section]
            if extra:
                raise UsageError(f"unknown keys in [{section}]: {sorted(extra)}")
        else:
            raise UsageError(f"unknown config section [{section}]")
    if "pipeline" not in cp or "workdir" not in cp["pipeline"]:
        raise UsageError("config needs [pipeline] workdir")
    if "ingest" not in cp or "triplets" not in cp["ingest"]:
        raise UsageError("config needs [ingest] triplets")
    if "annotations" not in cp["ingest"]:
        raise UsageError("config needs [ingest] annotations")
    for key in ("triplets", "annotations"):
        path = cp["ingest"][key]
        if not os.path.exists(path):
            raise DataError(f"[ingest] {key} file not found: {path}")
    if "splits" in cp["ingest"] and not os.path.isdir(cp["ingest"]["splits"]):
        raise DataError(f"[ingest] splits directory not found: {cp['ingest']['splits']}")
    for section in cp.sections():
        if section.startswith("model:"):
            path = cp[section]["embeddings"]
            if not os.path.exists(path):
                raise DataError(f"[{section}] embeddings file not found: {path}")


def _train_kwargs(section, defaults):
    out = dict(defaults)
    getters = {
        "layers": section.getint,
        "units": section.getint,
        "lr": section.getfloat,
        "dropout": section.getfloat,
        "wd": section.getfloat,
        "epochs": section.getint,
        "warmup": section.getint,
        "batch_size": section.getint,
    }
    for key, getter in getters.items():
        if key in section:
            out[key] = getter(key)
    return out


def run_pipeline(config_path):
    started = _now()
    if not os.path.exists(config_path):
        raise DataError(f"config file not found: {config_path}")
    cp = configparser.ConfigParser()
    cp.read(config_path, encoding="utf-8")
    _validate_pipeline_config(cp)

    workdir = cp["pipeline"]["workdir"]
    seed = cp["pipeline"].getint("seed", fallback=0)
    triplets = cp["ingest"]["triplets"]
    annotations = cp["ingest"]["annotations"]
    os.makedirs(workdir, exist_ok=True)

    ingest_dir = os.path.join(workdir, "ingest")
    splits_dir = os.path.join(ingest_dir, "splits")
    embeddings_path = os.path.join(workdir, "embeddings.tsv")
    models_dir = os.path.join(workdir, "models")
    eval_root = os.path.join(workdir, "eval")
    analyze_dir = os.path.join(workdir, "analyze")
    report_dir = os.path.join(workdir, "report")

    fact = cp["factorize"] if "factorize" in cp else cp["DEFAULT"]
    train_section = cp["train"] if "train" in cp else None
    eval_split = cp["evaluate"].get("split", "test") if "evaluate" in cp else "test"
    top_n = cp["analyze"].getint("top_n", fallback=25) if "analyze" in cp else 25
    clusters = cp["analyze"].getboolean("clusters", fallback=False) if "analyze" in cp else False

    base_train = dict(
        layers=2, units=2000, lr=1e-3, dropout=0.0, wd=0.0, epochs=100, warmup=1, batch_size=256
    )
    if train_section is not None:
        base_train = _train_kwargs(train_section, base_train)

    extra_models = []
    for section in sorted(cp.sections()):
        if section.startswith("model:"):
            name = section[len("model:") :]
            kwargs = _train_kwargs(cp[section], base_train)
            extra_models.append((name, cp[section]["embeddings"], kwargs))

    stage = "ingest"
    try:
        print(f"[ingest] -> {ingest_dir}")
        run_ingest(
            triplets,
            annotations,
            ingest_dir,
            splits=cp["ingest"].get("splits", fallback=None),
            seed=seed,
        )

        stage = "factorize"
        print(f"[factorize] -> {embeddings_path}")
        run_factorize(
            triplets,
            embeddings_path,
            rank=fact.getint("rank", fallback=200),
            alpha=fact.getfloat("alpha", fallback=40.0),
            regularization=fact.getfloat("regularization", fallback=None),
            iters=fact.getint("iters", fallback=15),
            seed=seed,
        )

        stage = "train"
        model_paths = [("listening", os.path.join(models_dir, "listening.npz"))]
        print(f"[train] listening -> {model_paths[0][1]}")
        run_train(
            embeddings_path, annotations, splits_dir, model_paths[0][1], seed=seed, **base_train
        )
        for name, emb, kwargs in extra_models:
            path = os.path.join(models_dir, f"{name}.npz")
            print(f"[train] {name} -> {path}")
            run_train(emb, annotations, splits_dir, path, seed=seed, **kwargs)
            model_paths.append((name, path))

        stage = "evaluate"
        eval_dirs = []
        emb_for = {"listening": embeddings_path}
        emb_for.update({name: emb for name, emb, _ in extra_models})
        for name, model_path in model_paths:
            directory = os.path.join(eval_root, name)
            print(f"[evaluate] {name} ({eval_split}) -> {directory}")
            run_evaluate(
                model_path, emb_for[name], annotations, splits_dir, eval_split, directory
            )
            eval_dirs.append((name, directory))

        stage = "analyze"
        print(f"[analyze] -> {analyze_dir}")
        run_analyze(triplets, annotations, analyze_dir, top_n=top_n, clusters=clusters, seed=seed)

        stage = "report"
        print(f"[report] -> {report_dir}")
        run_report(ingest_dir, eval_dirs, report_dir, analyze_dir=analyze_dir)
    except Exception as exc:
        print(f"pipeline: stage '{stage}' failed: {exc}", file=sys.stderr)
        raise

    _write_manifest(
        os.path.join(workdir, MANIFEST_NAME),
        "pipeline",
        {
            "config": str(config_path),
            "workdir": str(workdir),
            "stages": ["ingest", "factorize", "train", "evaluate", "analyze", "report"],
            "models": [name for name, _ in model_paths],
        },
        {"config": config_path, "triplets": triplets, "annotations": annotations},
        seed,
        started,
    )
    print(f"pipeline complete: {workdir}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would call sys.exit(2)
        raise UsageError(message)


def _parse_eval_specs(specs):
    pairs = []
    for spec in specs:
        name, sep, directory = spec.partition("=")
        if not sep or not name or not directory:
            raise UsageError(f"--eval expects NAME=DIR, got {spec!r}")
        pairs.append((name, directory))
    return pairs


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="moodstack", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help="cap BLAS thread pools (set before any numeric work)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a corpus, write stats and splits")
    p.add_argument("--triplets", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--splits", default=None, help="load published split files instead of sampling")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("factorize", help="factorize play counts into track embeddings")
    p.add_argument("--triplets", required=True)
    p.add_argument("--rank", type=int, default=200)
    p.add_argument("--alpha", type=float, default=40.0)
    p.add_argument("--lambda", dest="regularization", type=float, default=None)
    p.add_argument("--iters", type=int, default=15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train the tag classifier on an embedding file")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--splits", required=True)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--units", type=int, default=2000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--wd", type=float, default=0.0)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="macro-AP report for a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--splits", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out", required=True)

    p = sub.add_parser("analyze", help="consistency curve, co-occurrence, clustering")
    p.add_argument("--triplets", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--top-n", type=int, default=25)
    p.add_argument("--clusters", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("hpo", help="random hyperparameter search")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--splits", required=True)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--seconds", type=float, default=None)
    p.add_argument("--trial-epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="JSON-lines trial log path")

    p = sub.add_parser("report", help="figure data files from stage outputs")
    p.add_argument("--ingest", required=True, help="ingest output directory")
    p.add_argument("--analyze", default=None, help="analyze output directory")
    p.add_argument(
        "--eval",
        action="append",
        default=[],
        metavar="NAME=DIR",
        help="evaluated model report directory (repeatable)",
    )
    p.add_argument("--out", required=True)

    p = sub.add_parser("pipeline", help="run every stage from one config file")
    p.add_argument("--config", required=True)
    return parser


def _dispatch(args) -> int:
    if args.command == "ingest":
        return run_ingest(args.triplets, args.annotations, args.out, args.splits, args.seed)
    if args.command == "factorize":
        return run_factorize(
            args.triplets,
            args.out,
            rank=args.rank,
            alpha=args.alpha,
            regularization=args.regularization,
            iters=args.iters,
            seed=args.seed,
        )
    if args.command == "train":
        return run_train(
            args.embeddings,
            args.annotations,
            args.splits,
            args.out,
            layers=args.layers,
            units=args.units,
            lr=args.lr,
            dropout=args.dropout,
            wd=args.wd,
            epochs=args.epochs,
            warmup=args.warmup,
            batch_size=args.batch_size,
            seed=args.seed,
        )
    if args.command == "evaluate":
        return run_evaluate(
            args.model, args.embeddings, args.annotations, args.splits, args.split, args.out
        )
    if args.command == "analyze":
        return run_analyze(
            args.triplets,
            args.annotations,
            args.out,
            top_n=args.top_n,
            clusters=args.clusters,
            seed=args.seed,
        )
    if args.command == "hpo":
        return run_hpo(
            args.embeddings,
            args.annotations,
            args.splits,
            args.out,
            trials=args.trials,
            seconds=args.seconds,
            seed=args.seed,
            trial_epochs=args.trial_epochs,
            batch_size=args.batch_size,
        )
    if args.command == "report":
        return run_report(args.ingest, _parse_eval_specs(args.eval), args.out, args.analyze)
    if args.command == "pipeline":
        return run_pipeline(args.config)
    raise UsageError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.threads is not None:
            if args.threads < 1:
                raise UsageError("--threads must be positive")
            for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
                os.environ[var] = str(args.threads)
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
        return _dispatch(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except MoodstackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - the CLI boundary maps everything
        print(f"unexpected failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
