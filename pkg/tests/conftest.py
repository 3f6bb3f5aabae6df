"""Shared fixtures. Trained models are built once per session."""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oodgen import data, experiment  # noqa: E402

SEEDS = (0, 1, 2)

# one line per acceptance criterion, filled in by tests/test_acceptance.py
VERDICTS = []


@pytest.fixture(scope="session")
def mnist_idx(tmp_path_factory):
    """The 5000-image MNIST subset bundled with mlxtend, converted to IDX."""
    pytest.importorskip("mlxtend")
    return data.mnist5k_to_idx(tmp_path_factory.mktemp("mnist5k"))


@pytest.fixture(scope="session")
def letters_idx(tmp_path_factory):
    """1000 rendered A-J glyphs standing in for NotMNIST."""
    pytest.importorskip("PIL")
    from oodgen import letters

    path = tmp_path_factory.mktemp("letters") / "letters-idx3-ubyte"
    data.save_idx(letters.render_letters(1000, 12345), path)
    return path


@pytest.fixture(scope="session")
def toy_cfg(tmp_path_factory):
    return experiment.preset("toy3d", out=str(tmp_path_factory.mktemp("toy")))


@pytest.fixture(scope="session")
def toy_run(toy_cfg):
    return experiment.run_pipeline(toy_cfg)


def mnist_config(mnist_idx, letters_idx, out, seed):
    images, labels = mnist_idx
    return experiment.preset(
        "mnist",
        in_images=str(images),
        in_labels=str(labels),
        ood_roster=f"gaussian_noise,uniform_noise,sphere_ood,letters={letters_idx}",
        seed=seed,
        out=str(out),
    )


@pytest.fixture(scope="session")
def mnist_runs(mnist_idx, letters_idx, tmp_path_factory):
    """Full pipeline plus baselines for each seed: ``{seed: (nplus1_result, baseline_result)}``."""
    out = tmp_path_factory.mktemp("mnist_runs")
    runs = {}
    for seed in SEEDS:
        cfg = mnist_config(mnist_idx, letters_idx, out, seed)
        runs[seed] = (experiment.run_pipeline(cfg), experiment.run_baselines(cfg))
    return runs


@pytest.fixture(scope="session")
def mnist_model(mnist_runs):
    return mnist_runs[SEEDS[0]][0].model


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
