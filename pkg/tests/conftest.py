"""Shared fixtures.

``smoke_data``/``smoke_config`` give a tiny synthetic benchmark for fast
end-to-end trainer and CLI tests. ``bench_data``/``bench_runs`` expose the
default benchmark with a session-wide cache of training runs so the
acceptance tests that share seeds train each (method, score source, seed)
combination exactly once.
"""

import pytest

from ranksemi.metrics import evaluate
from ranksemi.synthgen import SynthSpec, generate
from ranksemi.trainer import TrainingConfig, train

SMOKE_SPEC = SynthSpec(n_labelled=12, n_unlabelled=24, n_val=6, n_test=8,
                       feature_dim=5, people_min=2, people_max=5,
                       noise_fraction=0.25, n_modes=3, labelled_mode_bias=1.0,
                       shared_direction=0.3, seed=11)


def smoke_config(**overrides) -> TrainingConfig:
    """A training config small enough to run in well under a second."""
    base = dict(epochs=3, ramp_epochs=2, hidden=6, k=4, batch_labelled=3,
                batch_unlabelled=4, seed=5)
    base.update(overrides)
    return TrainingConfig(**base)


@pytest.fixture(scope="session")
def smoke_data():
    lab, unl, val, test, noise = generate(SMOKE_SPEC)
    return {"lab": lab, "unl": unl, "val": val, "test": test, "noise": noise}


@pytest.fixture(scope="session")
def bench_data():
    lab, unl, val, test, noise = generate(SynthSpec())
    return {"lab": lab, "unl": unl, "val": val, "test": test, "noise": noise}


@pytest.fixture(scope="session")
def bench_runs(bench_data):
    """Memoized default-benchmark runs: get(method, seed, score_source)
    returns (test mAP, best model, history), training at most once per key."""
    cache = {}

    def get(method, seed, score_source="softmax", **overrides):
        key = (method, seed, score_source, tuple(sorted(overrides.items())))
        if key not in cache:
            cfg = TrainingConfig(seed=seed, method=method,
                                 score_source=score_source, **overrides)
            model, hist = train(cfg, bench_data["lab"], bench_data["unl"],
                                bench_data["val"])
            test_map = evaluate(model, bench_data["test"]).map
            cache[key] = (test_map, model, hist)
        return cache[key]

    return get
