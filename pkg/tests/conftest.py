import numpy as np
import pytest

import advtune as a


def pytest_runtest_logreport(report):
    # one unmistakable verdict line per acceptance criterion
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        print(f"\n[acceptance] {name}: {report.outcome.upper()}", flush=True)


@pytest.fixture(scope="session")
def blobs():
    """Well-separated 3-class blobs, cheap enough for training tests."""
    return a.synth_blobs(classes=3, per_class=80, dims=8, spread=0.04, seed=7011)


@pytest.fixture(scope="session")
def blob_net():
    return a.NetworkSpec((8,), (a.Dense(8, 16), a.ReLU(), a.Dense(16, 3)), 3)


@pytest.fixture(scope="session")
def digits():
    """Small rendered-digit set shared across image tests."""
    return a.synth_digits(600, seed=9340)


@pytest.fixture(scope="session")
def trained_blob_model(blobs, blob_net):
    cfg = a.AdvTrainConfig(
        ratio=0.0, train_epsilon=0.0, epochs=4, batch_size=30, learning_rate=0.5, seed=113
    )
    report = a.train_clean(blobs, cfg, blob_net)
    return report.params


def small_conv_net():
    return a.NetworkSpec(
        (1, 10, 10),
        (a.Conv2D(1, 3), a.ReLU(), a.MaxPool(), a.Flatten(), a.Dense(48, 4)),
        4,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
