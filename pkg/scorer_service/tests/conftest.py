"""Shared fixtures: a synthetic corpus, weak labels, and one trained checkpoint.

The corpus and label files come out of the engine package on purpose; its
artifacts are the file contract this service must read.  Training settings
here differ from the defaults because the session base model is randomly
initialized: the 2e-5 default assumes pretrained weights, while an
untrained base needs a larger step and smaller batches to move at all.
"""

from __future__ import annotations

import pytest
from sent2span.cli import main as engine_main
from sent2span.corpus import save_corpus
from sent2span.synthetic import SyntheticConfig, generate_corpus

from scorer_service.data import load_training_set, vocabulary
from scorer_service.model import (
    FineTuneConfig,
    SentenceClassifier,
    build_tiny_base,
    fine_tune,
)
from scorer_service.service import ScorerService

TRAIN_SEED = 17
EVAL_SEED = 23

TEST_TUNE = {
    "epochs": 3,
    "learning_rate": 2e-3,
    "train_batch_size": 8,
    "max_seq_len": 128,
    "seed": 1,
}


@pytest.fixture(scope="session")
def workspace(tmp_path_factory):
    return tmp_path_factory.mktemp("scorer_service")


@pytest.fixture(scope="session")
def corpus_path(workspace):
    path = workspace / "corpus.jsonl"
    save_corpus(generate_corpus(SyntheticConfig(n_sentences=400, seed=TRAIN_SEED)), path)
    return path


@pytest.fixture(scope="session")
def labels_path(workspace, corpus_path):
    path = workspace / "labels.jsonl"
    exit_code = engine_main(
        [
            "weaklabel",
            "--corpus", str(corpus_path),
            "--pico", "population",
            "--mode", "minor",
            "--output", str(path),
        ]
    )
    assert exit_code == 0
    return path


@pytest.fixture(scope="session")
def base_dir(workspace, corpus_path):
    return build_tiny_base(vocabulary(corpus_path), workspace / "base")


@pytest.fixture(scope="session")
def training_split(corpus_path, labels_path):
    sentences, labels = load_training_set(corpus_path, labels_path, "population")
    n_train = int(len(sentences) * 0.8)
    return (
        sentences[:n_train],
        labels[:n_train],
        sentences[n_train:],
        labels[n_train:],
    )


@pytest.fixture(scope="session")
def checkpoint(workspace, base_dir, training_split):
    train_x, train_y, dev_x, dev_y = training_split
    config = FineTuneConfig(base_model=base_dir, pico="population", **TEST_TUNE)
    return fine_tune(
        train_x, train_y, config, workspace / "checkpoint",
        dev_sentences=dev_x, dev_labels=dev_y,
    )


@pytest.fixture(scope="session")
def classifier(checkpoint):
    return SentenceClassifier.load(checkpoint.checkpoint_dir)


@pytest.fixture(scope="session")
def live_service(classifier):
    with ScorerService(classifier) as service:
        yield service


@pytest.fixture(scope="session")
def eval_corpus_path(workspace):
    path = workspace / "eval.jsonl"
    save_corpus(generate_corpus(SyntheticConfig(n_sentences=120, seed=EVAL_SEED)), path)
    return path
