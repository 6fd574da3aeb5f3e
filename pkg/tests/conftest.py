"""Shared fixtures: one tiny synthetic dataset plus small trainer configs.

Session-scoped fixtures are treated as read-only by their consumers;
anything that needs to mutate model or optimizer state builds a private
trainer through ``trainer_factory``.
"""

import dataclasses
import warnings

import pytest

from eventcap.data import SynthParams, synth_generate
from eventcap.training import ExperimentConfig, build_trainer

UNIT_PARAMS = SynthParams(
    n_videos=6,
    val_fraction=0.34,
    frames_range=(60, 80),
    events_range=(2, 3),
    event_len_range=(8, 20),
    d_in=16,
    seed=7,
)


def small_experiment(seed: int = 0, **train_overrides) -> ExperimentConfig:
    """A config small enough that one train step takes well under a second."""
    cfg = ExperimentConfig()
    model = dataclasses.replace(
        cfg.model,
        d_in=16,
        d_model=32,
        n_queries=6,
        n_enc_layers=1,
        n_dec_layers=2,
        n_heads=4,
        max_events=6,
        vocab_size=64,
        max_caption_len=8,
        n_concepts=6,
        n_frames=40,
    )
    train_kwargs = dict(epochs=1, batch_size=3, eval_interval=1, seed=seed)
    train_kwargs.update(train_overrides)
    train = dataclasses.replace(cfg.train, **train_kwargs)
    return dataclasses.replace(cfg, model=model, train=train)


@pytest.fixture(scope="session")
def unit_dataset():
    return synth_generate(UNIT_PARAMS)


@pytest.fixture(scope="session")
def unit_trainer(unit_dataset):
    """Freshly built trainer, no optimizer steps taken. Read-only."""
    return build_trainer(unit_dataset, small_experiment())


@pytest.fixture(scope="session")
def stepped_trainer(unit_dataset):
    """Trainer after one optimizer step. Read-only.

    The localization delta heads are zero-initialized, so several gradient
    paths through loc_feats are exactly zero at init; one step makes them
    live, which the wiring tests rely on.
    """
    tr = build_trainer(unit_dataset, small_experiment())
    tr.train_step(unit_dataset.train[:3])
    return tr


@pytest.fixture()
def trainer_factory(unit_dataset):
    def make(seed: int = 0, **train_overrides):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            return build_trainer(unit_dataset, small_experiment(seed=seed, **train_overrides))

    return make
