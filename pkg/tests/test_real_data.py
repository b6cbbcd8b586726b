"""Real-corpus checks, run only when the data is supplied locally.

Point MOODSTACK_DATA_DIR at a directory containing:

    triplets.tsv          listener <TAB> track <TAB> play_count
    annotations.tsv       track <TAB> tag;tag;...
    splits/train.txt      one track id per line (likewise val.txt, test.txt)
    embeddings.tsv        optional precomputed listening embeddings; when
                          absent the factorization runs here (slow at scale)
    audio/<name>.tsv      optional audio-model embedding files, same format

The published-corpus figures asserted here are reference statistics of
that specific dataset; none of them apply to synthetic data.
"""

import os
from pathlib import Path

import numpy as np
import pytest

DATA_DIR = os.environ.get("MOODSTACK_DATA_DIR")

pytestmark = pytest.mark.skipif(
    not DATA_DIR, reason="MOODSTACK_DATA_DIR not set; real-corpus checks skipped"
)

# one shared training recipe keeps the embedding comparison directional:
# every embedding type gets the same classifier budget
TRAIN_KW = dict(layers=4, units=3909, lr=4e-4, dropout=0.25, wd=0.0,
                epochs=30, warmup=1, batch_size=256)


@pytest.fixture(scope="module")
def paths():
    root = Path(DATA_DIR)
    required = ["triplets.tsv", "annotations.tsv", "splits/train.txt",
                "splits/val.txt", "splits/test.txt"]
    missing = [rel for rel in required if not (root / rel).exists()]
    if missing:
        pytest.skip(f"real corpus incomplete, missing {missing}")
    return root


@pytest.fixture(scope="module")
def annotations(paths):
    from moodstack.corpus import parse_annotations

    return parse_annotations(paths / "annotations.tsv")


@pytest.fixture(scope="module")
def interactions(paths):
    from moodstack.corpus import parse_triplets

    return parse_triplets(paths / "triplets.tsv")


@pytest.fixture(scope="module")
def split(paths):
    from moodstack.corpus import DatasetSplit

    return DatasetSplit.load(paths / "splits")


def test_published_split_sizes(split):
    assert len(split.train_ids) == 53585
    assert len(split.val_ids) == 6695
    assert len(split.test_ids) == 6713


def test_tag_count_marginals(annotations):
    from moodstack.corpus import corpus_stats

    stats = corpus_stats(annotations)
    assert stats.tag_counts["Rousing"] == 14018
    assert stats.tag_counts["Melodic"] == 95
    assert abs(stats.mean_tags_per_track - 9.1) <= 0.1
    assert abs(stats.std_tags_per_track - 5.7) <= 0.1


def test_consistency_ratio_reference_points(interactions, annotations):
    from moodstack.analytics import consistency_ratios

    curve = consistency_ratios(interactions, annotations, top_n=4)
    assert abs(curve.ratio(1) - 0.654) <= 0.02
    assert abs(curve.ratio(4) - 0.501) <= 0.02


@pytest.fixture(scope="module")
def listening_embeddings(paths, interactions):
    from moodstack.factorization import ConfidenceParams, als_fit, import_embeddings

    precomputed = paths / "embeddings.tsv"
    if precomputed.exists():
        return import_embeddings(precomputed)
    model = als_fit(interactions, rank=200, params=ConfidenceParams(alpha=40.0),
                    n_sweeps=15, seed=0)
    return model.embedding_table()


def _test_macro_ap(table, annotations, split):
    from moodstack.evaluation import RankedPredictions, macro_ap
    from moodstack.mlp import MlpConfig, fit, kaiming_init

    def block(name):
        ids = sorted(split.ids_for(name) & set(table.track_ids))
        x = table.matrix_for(ids)
        y = annotations.aligned_matrix(ids).astype(np.float64)
        return x, y

    train_x, train_y = block("train")
    val_x, val_y = block("val")
    test_x, test_y = block("test")
    config = MlpConfig(
        input_dim=table.rank, output_dim=annotations.n_tags,
        n_layers=TRAIN_KW["layers"], n_units=TRAIN_KW["units"],
        learning_rate=TRAIN_KW["lr"], dropout=TRAIN_KW["dropout"],
        weight_decay=TRAIN_KW["wd"], epochs=TRAIN_KW["epochs"],
        warmup_epochs=TRAIN_KW["warmup"],
    )
    model, _ = fit(kaiming_init(config, seed=0), train_x, train_y, val_x, val_y,
                   seed=0, batch_size=TRAIN_KW["batch_size"])
    probs = model.predict(test_x).astype(np.float64)
    return macro_ap(RankedPredictions(probs, test_y)).macro_ap


def test_listening_beats_every_audio_embedding(paths, annotations, split, listening_embeddings):
    from moodstack.factorization import import_embeddings

    audio_dir = paths / "audio"
    audio_files = sorted(audio_dir.glob("*.tsv")) if audio_dir.is_dir() else []
    if not audio_files:
        pytest.skip("no audio embedding files supplied under audio/")

    listening_ap = _test_macro_ap(listening_embeddings, annotations, split)
    results = {"listening": listening_ap}
    for path in audio_files:
        ap = _test_macro_ap(import_embeddings(path), annotations, split)
        results[path.stem] = ap
        assert listening_ap > ap, (
            f"listening macro-AP {listening_ap:.4f} does not exceed "
            f"{path.stem} at {ap:.4f}"
        )
    print("test macro-AP by embedding type:", results)
