"""Shared fixtures: a small pretrained encoder and a tiny untrained model."""

import numpy as np
import pytest

from exedit.datasets import generate_toy_dataset
from exedit.encoder import EncoderPretrainConfig, pretrain_encoder
from exedit.training import init_train_state, preset_config, to_edit_model


def pytest_runtest_logreport(report):
    # One pass/fail line per acceptance criterion.
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        print(f"\n[ACCEPTANCE] {name}: {'PASS' if report.passed else 'FAIL'}")


@pytest.fixture(scope="session")
def toy_dataset():
    rng = np.random.default_rng(1234)
    return generate_toy_dataset(40, (32, 32), rng)


@pytest.fixture(scope="session")
def small_encoder(toy_dataset):
    rng = np.random.default_rng(99)
    images = [a.image for a in toy_dataset]
    return pretrain_encoder(images, EncoderPretrainConfig(steps=60, batch_size=16), rng)


@pytest.fixture(scope="session")
def tiny_config():
    return preset_config(
        "classifier_free", base_width=16, depth=2, batch_size=4, prior_steps=0, encoder_steps=60
    )


@pytest.fixture(scope="session")
def tiny_state(tiny_config, small_encoder):
    return init_train_state(tiny_config, small_encoder)


@pytest.fixture(scope="session")
def tiny_model(tiny_state):
    return to_edit_model(tiny_state)
