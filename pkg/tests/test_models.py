import dataclasses

import numpy as np
import pytest

from fepkit import models
from fepkit.datamodel import FeatureView
from fepkit.numcore import ConfigurationError, InputError


def toy_view(rng, n=600, links=4, features=("noise_variance", "mcs"),
             separable=False):
    """Small standardized view with per-link time ordering."""
    k = len(features)
    X = rng.normal(0, 1, (n, k))
    if separable:
        y = (X[:, 0] + 0.5 * X[:, -1] > 0).astype(np.int64)
    else:
        y = rng.integers(0, 2, n)
    link_ids = np.array([f"m0:{i % links}->{1000 + i % links}" for i in range(n)])
    t_ms = np.arange(n, dtype=np.int64)
    snr = rng.normal(15, 8, n)
    return FeatureView(X=X, y=y, link_ids=link_ids, t_ms=t_ms, snr_db=snr,
                       feature_names=tuple(features), mean=np.zeros(k),
                       std=np.ones(k))


def quick_config(kind, **over):
    base = dict(epochs=2, train_batch=64, test_batch=32, chunks_per_step=4, seed=0)
    base.update(over)
    return models.TrainConfig.for_architecture(kind, **base)


# ----------------------------------------------------------------------
# construction
# ----------------------------------------------------------------------

def test_mlp_layer_widths():
    model = models.build(models.ArchitectureSpec("mlp", 2), seed=0)
    shapes = [w.shape for w in model.net.weights]
    assert shapes == [(2, 50), (50, 50), (50, 50), (50, 50), (50, 2)]


def test_bgru_head_is_200_by_2():
    model = models.build(models.ArchitectureSpec("bgru", 3), seed=0)
    assert model.net.head_w.shape == (200, 2)


def test_bsru_is_two_bidirectional_layers():
    model = models.build(models.ArchitectureSpec("bsru", 2), seed=0)
    assert len(model.net.cells) == 4
    assert model.net.cells[2].input_dim == 200
    assert model.net.head_w.shape == (200, 2)


@pytest.mark.parametrize("kind", models.ARCHITECTURES)
@pytest.mark.parametrize("input_dim", [2, 3])
def test_parameter_counts_match_closed_form(kind, input_dim):
    spec = models.ArchitectureSpec(kind, input_dim)
    model = models.build(spec, seed=1)
    assert model.parameter_count() == models.parameter_count(spec)


def test_gru_parameter_count_formula():
    spec = models.ArchitectureSpec("gru", 2)
    I, H = 2, models.RNN_HIDDEN
    assert models.parameter_count(spec) == 3 * (I * H + H * H + H) + H * 2 + 2


def test_input_dim_guard():
    with pytest.raises(ConfigurationError):
        models.ArchitectureSpec("mlp", 5)
    models.ArchitectureSpec("mlp", 5, allow_nonstandard_input=True)
    with pytest.raises(ConfigurationError):
        models.ArchitectureSpec("cnn", 2)


# ----------------------------------------------------------------------
# training
# ----------------------------------------------------------------------

def test_mlp_learns_separable_data(rng):
    view = toy_view(rng, n=2000, separable=True)
    model = models.build(models.ArchitectureSpec("mlp", 2), seed=0)
    config = quick_config("mlp", epochs=50, train_batch=128)
    models.train(model, view, view.select(np.zeros(view.n, dtype=bool)), config)
    pred = models.predict_labels(model, view)
    assert np.mean(pred == view.y) >= 0.99


def test_zero_learning_rate_freezes_parameters(rng):
    view = toy_view(rng, n=200)
    model = models.build(models.ArchitectureSpec("gru", 2), seed=0)
    before = [p.value.copy() for p in model.params]
    config = models.TrainConfig(optimizer="adam", learning_rate=0.0, epochs=2,
                                train_batch=32, test_batch=32, chunks_per_step=2)
    models.train(model, view, view, config)
    for p, b in zip(model.params, before):
        assert np.array_equal(p.value, b)


@pytest.mark.parametrize("kind", models.ARCHITECTURES)
def test_training_is_deterministic(rng, kind):
    view = toy_view(rng, n=240, separable=True)
    vals = []
    for _ in range(2):
        model = models.build(models.ArchitectureSpec(kind, 2), seed=3)
        models.train(model, view, view, quick_config(kind, seed=3))
        vals.append(np.concatenate([p.value.ravel() for p in model.params]))
    assert np.array_equal(vals[0], vals[1])


@pytest.mark.parametrize("kind", models.ARCHITECTURES)
def test_loss_decreases_over_first_epochs(rng, kind):
    view = toy_view(rng, n=400, separable=True)
    model = models.build(models.ArchitectureSpec(kind, 2), seed=1)
    over = {} if kind == "mlp" else {"learning_rate": 3e-3}
    models.train(model, view, view.select(np.zeros(view.n, dtype=bool)),
                 quick_config(kind, epochs=3, **over))
    losses = model.history.train_loss
    assert losses[-1] < losses[0]


def test_empty_training_set_rejected(rng):
    view = toy_view(rng, n=50)
    empty = view.select(np.zeros(view.n, dtype=bool))
    model = models.build(models.ArchitectureSpec("mlp", 2), seed=0)
    with pytest.raises(InputError):
        models.train(model, empty, view, quick_config("mlp"))


def test_feature_count_must_match_input_dim(rng):
    view = toy_view(rng, n=50, features=("noise_variance",))
    model = models.build(models.ArchitectureSpec("mlp", 2), seed=0)
    with pytest.raises(ConfigurationError):
        models.train(model, view, view, quick_config("mlp"))


def test_history_has_one_entry_per_epoch(rng):
    view = toy_view(rng, n=150)
    model = models.build(models.ArchitectureSpec("mlp", 2), seed=0)
    models.train(model, view, view, quick_config("mlp", epochs=4))
    assert len(model.history.train_loss) == 4
    assert len(model.history.val_weighted_accuracy) == 4
    assert len(model.history.wall_seconds) == 4


# ----------------------------------------------------------------------
# prediction
# ----------------------------------------------------------------------

def _trained(rng, kind, view, **over):
    model = models.build(models.ArchitectureSpec(kind, view.X.shape[1]), seed=0)
    models.train(model, view, view, quick_config(kind, **over))
    return model


def test_mlp_prediction_ignores_test_batch(rng):
    view = toy_view(rng)
    model = _trained(rng, "mlp", view)
    a = models.predict_proba(model, view, test_batch=8)
    b = models.predict_proba(model, view, test_batch=512)
    assert np.array_equal(a, b)


def test_schema_mismatch_rejected(rng):
    view = toy_view(rng)
    model = _trained(rng, "mlp", view)
    other = toy_view(rng, features=("noise_variance", "bandwidth"))
    with pytest.raises(InputError):
        models.predict_proba(model, other)


def test_untrained_model_has_no_schema(rng):
    model = models.build(models.ArchitectureSpec("mlp", 2), seed=0)
    with pytest.raises(InputError):
        models.predict_proba(model, toy_view(rng))


def test_probabilities_in_unit_interval(rng):
    view = toy_view(rng, n=300)
    for kind in ("mlp", "gru"):
        model = _trained(rng, kind, view)
        probs = models.predict_proba(model, view, 32)
        assert np.all((probs >= 0) & (probs <= 1))


def _single_link_view(rng, n=256):
    X = rng.normal(0, 1, (n, 2))
    return FeatureView(X=X, y=rng.integers(0, 2, n),
                       link_ids=np.array(["m0:0->1000"] * n),
                       t_ms=np.arange(n, dtype=np.int64),
                       snr_db=np.full(n, 10.0),
                       feature_names=("noise_variance", "mcs"),
                       mean=np.zeros(2), std=np.ones(2))


def test_bidirectional_uses_future_inside_window(rng):
    view = _single_link_view(rng)
    model = _trained(rng, "bgru", view, epochs=1)
    base = models.predict_proba(model, view, test_batch=128)
    bumped = dataclasses.replace(view, X=view.X.copy())
    bumped.X[100] += 3.0          # frame 100 sits in the first 128-window
    after = models.predict_proba(model, bumped, test_batch=128)
    assert abs(after[40] - base[40]) > 1e-12      # earlier frame, same window
    assert np.array_equal(after[128:], base[128:])  # other window untouched


def test_causal_gru_ignores_future(rng):
    view = _single_link_view(rng)
    model = _trained(rng, "gru", view, epochs=1)
    base = models.predict_proba(model, view, test_batch=128)
    bumped = dataclasses.replace(view, X=view.X.copy())
    bumped.X[100] += 3.0
    after = models.predict_proba(model, bumped, test_batch=128)
    assert np.array_equal(after[:100], base[:100])   # strictly before the change
    assert abs(after[110] - base[110]) > 1e-12       # after it, same window


def test_window_isolation_between_chunks(rng):
    view = _single_link_view(rng)
    model = _trained(rng, "bgru", view, epochs=1)
    base = models.predict_proba(model, view, test_batch=128)
    bumped = dataclasses.replace(view, X=view.X.copy())
    bumped.X[200] += 3.0          # second window
    after = models.predict_proba(model, bumped, test_batch=128)
    assert np.array_equal(after[:128], base[:128])


# ----------------------------------------------------------------------
# serialization
# ----------------------------------------------------------------------

@pytest.mark.parametrize("kind", models.ARCHITECTURES)
def test_save_load_round_trip_bit_exact(tmp_path, rng, kind):
    view = toy_view(rng, n=200)
    model = _trained(rng, kind, view, epochs=1)
    path = tmp_path / "model.json"
    models.save_model(model, path)
    loaded = models.load_model(path)
    for a, b in zip(model.params, loaded.params):
        assert np.array_equal(a.value, b.value)
    p1 = models.predict_proba(model, view, 64)
    p2 = models.predict_proba(loaded, view, 64)
    assert np.array_equal(p1, p2)


def test_load_rejects_wrong_version(tmp_path, rng):
    view = toy_view(rng, n=100)
    model = _trained(rng, "mlp", view, epochs=1)
    path = tmp_path / "model.json"
    models.save_model(model, path)
    doc = path.read_text().replace('"format_version": 1', '"format_version": 99')
    path.write_text(doc)
    with pytest.raises(InputError):
        models.load_model(path)
