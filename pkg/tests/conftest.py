"""Shared fixtures.

Fast fixtures build tiny networks and datasets. The session-scoped ``toy``
fixtures train the full default pipeline once and are shared by the slow
tests and the acceptance suite.
"""
from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from videoiq.config import DataConfig, StageConfig, TrainConfig
from videoiq.data import SyntheticSpec, generate_dataset
from videoiq.pipeline import make_splits, retrain_policy, run_pipeline, shifted_config
from videoiq.policy import ActionSpace, PolicyConfig, PolicyNet
from videoiq.recognizer import RecognitionNet, RecognizerConfig


def tiny_config(**stage2) -> TrainConfig:
    """Seconds-scale config: 16x16 frames, a handful of videos, 1-2 epochs."""
    spec = SyntheticSpec(frames=4, frame_size=16, policy_size=8, informative_min=1, informative_max=3)
    cfg = TrainConfig(data=DataConfig(train_videos=24, test_videos=12, policy_videos=16, spec=spec))
    s2 = dataclasses.replace(cfg.stage2, epochs=3, pretrain_epochs=1, batch_size=8, **stage2)
    return dataclasses.replace(
        cfg,
        teacher=StageConfig(epochs=2, lr=0.05, batch_size=8),
        stage1=StageConfig(epochs=2, lr=0.005, batch_size=8),
        stage2=s2,
        recognizer=dataclasses.replace(cfg.recognizer, widths=(4, 8, 8), strides=(2, 2, 1)),
        policy=PolicyConfig(widths=(4, 8), hidden=8),
    )


@pytest.fixture
def tiny_cfg() -> TrainConfig:
    return tiny_config()


@pytest.fixture
def tiny_data(tiny_cfg):
    return generate_dataset(tiny_cfg.data.train_spec(), split="train")


@pytest.fixture
def tiny_net(tiny_cfg) -> RecognitionNet:
    return RecognitionNet(tiny_cfg.recognizer_config(), seed=0)


@pytest.fixture
def tiny_policy(tiny_cfg) -> PolicyNet:
    return PolicyNet(tiny_cfg.policy_config(4), seed=0)


@pytest.fixture(scope="session")
def small_net() -> RecognitionNet:
    return RecognitionNet(RecognizerConfig(input_size=16, widths=(4, 8, 8), strides=(2, 2, 1)), seed=3)


@pytest.fixture(scope="session")
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


# ----------------------------------------------------------------------
# trained toy pipelines (slow)
# ----------------------------------------------------------------------


@pytest.fixture(scope="session")
def toy():
    """Default pipeline on dataset A."""
    return run_pipeline(TrainConfig())


@pytest.fixture(scope="session")
def toy_shifted():
    """Default pipeline on dataset B (rotated class orientations, fresh seeds)."""
    return run_pipeline(shifted_config(TrainConfig()))


@pytest.fixture(scope="session")
def toy_trimmed(toy):
    """Policy retrained on dense-informative data over dataset A's recognizer."""
    splits = make_splits(toy.config, trimmed=True)
    trainer = retrain_policy(toy, splits)
    return trainer, splits


@pytest.fixture(scope="session")
def actions() -> ActionSpace:
    return ActionSpace()
