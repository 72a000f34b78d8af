import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_corpus():
    """16x16 corpus: two baseline generators with strong traces and two emerging ones."""
    from e3lab.synthgen import CorpusConfig, GeneratorSpec, build_corpus
    cfg = CorpusConfig(
        baseline=[GeneratorSpec("b_checker", "checkerboard", {"amplitude": 0.1}),
                  GeneratorSpec("b_peak", "spectral_peak", {"amplitude": 0.15, "fx": 0.25, "fy": 0.0})],
        emerging=[GeneratorSpec("g_1", "fixed_pattern", {"amplitude": 0.1}, 11),
                  GeneratorSpec("g_2", "noise_shaping", {"amplitude": 0.1}),
                  GeneratorSpec("g_3", "checkerboard", {"amplitude": 0.1, "period": 3})],
        master_seed=5, image_size=16,
        real_counts={"train": 120, "val": 0, "test": 40},
        baseline_counts={"train": 120, "val": 0, "test": 40},
        emerging_counts={"train": 60, "val": 0, "test": 30},
    )
    return build_corpus(cfg)


@pytest.fixture(scope="session")
def tiny_f0(tiny_corpus):
    from e3lab.detector import TrainConfig, build_detector, train_detector
    from e3lab.synthgen import BASELINE, REAL, split_corpus
    data = split_corpus(tiny_corpus, REAL, "train") + split_corpus(tiny_corpus, BASELINE, "train")
    model = build_detector("tiny", 8, seed=1, patch_size=16)
    return train_detector(model, data, TrainConfig(learning_rate=3e-3, epochs=12, seed=1, patch_size=16))


TINY_RUN = {
    "master_seed": 7,
    "methods": ["e3", "finetune", "er", "lwf", "majority", "baseline"],
    "sequence_length": 2,
    "corpus.image_size": 16,
    "corpus.patch_size": 16,
    "corpus.emerging": [
        {"id": "g_1", "family": "fixed_pattern", "params": {"amplitude": 0.1}, "fingerprint_seed": 11},
        {"id": "g_2", "family": "noise_shaping", "params": {"amplitude": 0.1}, "fingerprint_seed": 0},
        {"id": "g_3", "family": "checkerboard", "params": {"amplitude": 0.1, "period": 3}, "fingerprint_seed": 0},
    ],
    "corpus.real_counts": {"train": 40, "val": 0, "test": 10},
    "corpus.baseline_counts": {"train": 30, "val": 0, "test": 9},
    "corpus.emerging_counts": {"train": 20, "val": 0, "test": 8},
    "buffer.capacity": 20,
    "budget.n": 10,
    "sweep.budgets": [5, 10],
    "detector.preset": "tiny",
    "detector.embed_dim": 8,
    "baseline_train.epochs": 2,
    "update_train.epochs": 1,
    "ekfn.n_layers": 1,
    "ekfn.mlp_hidden": 8,
    "ekfn_train.steps": 10,
    "arch.presets": ["tiny"],
}


@pytest.fixture
def tiny_run():
    import copy
    return copy.deepcopy(TINY_RUN)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is not None and acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(acceptance.RESULTS):
            terminalreporter.write_line(line)
