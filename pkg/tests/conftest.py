import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from slopestrike import dataio
from slopestrike.forecaster import NhitsConfig, train

# Frozen desk-scale fixture: a forecaster trained on gently drifting GBM paths.
# Attack efficacy numbers in the acceptance suite are pinned to these knobs.
FIXTURE_SEED = 1234
TRAIN_KW = dict(n_series=10, n_days=400, s0=80.0, mu=4e-4, sigma=0.01)
VAL_KW = dict(n_series=3, n_days=400, s0=80.0, mu=4e-4, sigma=0.01)
EVAL_KW = dict(n_series=24, n_days=320, s0=90.0, mu=7e-4, sigma=0.009)

TOY_CONFIG = NhitsConfig(epochs=80, early_stop_patience=12, batch_size=128, lr=0.1)


@pytest.fixture(scope="session")
def train_series():
    return dataio.synth_gbm(seed=FIXTURE_SEED, **TRAIN_KW)


@pytest.fixture(scope="session")
def val_series():
    return dataio.synth_gbm(seed=FIXTURE_SEED + 1, **VAL_KW)


@pytest.fixture(scope="session")
def eval_series():
    return dataio.synth_gbm(seed=FIXTURE_SEED + 2, **EVAL_KW)


@pytest.fixture(scope="session")
def toy_model(train_series, val_series):
    model, log = train(train_series, val_series, TOY_CONFIG, seed=7)
    assert np.isfinite(log[-1][2])
    return model
