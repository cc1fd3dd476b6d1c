import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgprompt.config import RunConfig
from kgprompt.encoder import ToyEncoder
from kgprompt.errors import EmptyClass, MalformedFile, NonFiniteUpdate
from kgprompt.metrics import auc
from kgprompt.model import TRAINABLE
from kgprompt.pipeline import build_model, label_indices, score_features, to_scoreset, train_config
from kgprompt.trainer import TrainConfig, cosine_lr, fit, load_checkpoint, save_checkpoint, sgd_step


def test_cosine_lr_points():
    assert cosine_lr(0, 100, 0.001) == 0.001
    assert cosine_lr(100, 100, 0.001) == pytest.approx(0.0, abs=1e-18)
    assert cosine_lr(50, 100, 0.001) == pytest.approx(0.0005, rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 500), st.floats(1e-5, 1.0))
def test_cosine_lr_non_increasing(T, lr0):
    lrs = [cosine_lr(t, T, lr0) for t in range(T + 1)]
    assert all(b <= a + 1e-18 for a, b in zip(lrs, lrs[1:]))


def test_cosine_lr_out_of_range():
    with pytest.raises(ValueError):
        cosine_lr(11, 10, 0.1)


def test_sgd_step_no_gradient():
    p = {"w": np.array([1.0, -2.0])}
    new, v = sgd_step(p, {"w": np.zeros(2)}, {"w": np.zeros(2)}, 0.1, 0.9, 0.0)
    assert np.array_equal(new["w"], p["w"])


def test_sgd_step_hand_arithmetic():
    new, v = sgd_step({"w": np.array(1.0)}, {"w": np.array(2.0)}, {"w": np.array(0.0)}, 0.1, 0.9, 0.0)
    assert v["w"] == pytest.approx(-0.2) and new["w"] == pytest.approx(0.8)


def test_sgd_weight_decay_only():
    new, _ = sgd_step({"w": np.array(1.0)}, {"w": np.array(0.0)}, {"w": np.array(0.0)}, 1.0, 0.9, 0.0005)
    assert new["w"] == pytest.approx(0.9995)


def test_sgd_step_non_finite():
    with pytest.raises(NonFiniteUpdate):
        sgd_step({"w": np.array(1.0)}, {"w": np.array(np.inf)}, {"w": np.array(0.0)}, 0.1, 0.9, 0.0)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lam=-0.1)
    with pytest.raises(ValueError):
        TrainConfig(tau=0.0)


@pytest.fixture
def setup(toy_features):
    fs, _ = toy_features
    cfg = RunConfig(image_size=64, patch_grid=4, embed_dim=16, encoder_dim=32, hidden_dim=32, batch_size=16,
                    epochs=3)
    model = build_model(cfg)
    return fs, cfg, model, label_indices(model, cfg)


def test_zero_epochs_unchanged(setup):
    fs, cfg, model, (ri, mi) = setup
    out, history = fit(fs, model, TrainConfig(epochs=0), ri, mi)
    assert history == []
    assert out.param_checksum() == model.param_checksum()


def test_fit_leaves_input_model_alone(setup):
    fs, cfg, model, (ri, mi) = setup
    before = model.param_checksum()
    out, _ = fit(fs, model, train_config(cfg), ri, mi)
    assert model.param_checksum() == before != out.param_checksum()


def test_fit_deterministic(setup):
    fs, cfg, model, (ri, mi) = setup
    a, ha = fit(fs, model, train_config(cfg), ri, mi)
    b, hb = fit(fs, model, train_config(cfg), ri, mi)
    assert a.param_checksum() == b.param_checksum()
    assert ha == hb


def test_fit_one_class_rejected(setup):
    fs, cfg, model, (ri, mi) = setup
    with pytest.raises(EmptyClass):
        fit(fs.take(np.flatnonzero(fs.genuine)), model, train_config(cfg), ri, mi)


def test_encoder_untouched_by_training(setup):
    fs, cfg, model, (ri, mi) = setup
    enc = ToyEncoder(64, 4, 32, 0)
    before = enc.checksum()
    fit(fs, model, train_config(cfg), ri, mi)
    assert enc.checksum() == before
    assert set(model.params) == set(TRAINABLE)


def test_sce_term_non_positive_each_epoch(setup):
    fs, cfg, model, (ri, mi) = setup
    _, history = fit(fs, model, train_config(cfg), ri, mi)
    assert len(history) == cfg.epochs
    assert all(h.sce <= 0 for h in history)
    assert all(h.total == pytest.approx(h.srd + 0.5 * h.sce) for h in history)


def test_lambda_zero_is_cross_entropy_only(setup):
    fs, cfg, model, (ri, mi) = setup
    _, history = fit(fs, model, train_config(cfg.with_overrides(lam=0.0)), ri, mi)
    assert all(h.total == h.srd for h in history)


def test_toy_training_separates_dev(toy_features):
    fs, _ = toy_features
    cfg = RunConfig(image_size=64, patch_grid=4, embed_dim=16, encoder_dim=32, hidden_dim=32, batch_size=16)
    train = fs.take([i for i, s in enumerate(fs.subjects) if s < "s04"])
    dev = fs.take([i for i, s in enumerate(fs.subjects) if s >= "s04"])
    model = build_model(cfg)
    ri, mi = label_indices(model, cfg)
    model, _ = fit(train, model, train_config(cfg), ri, mi)
    assert auc(to_scoreset(score_features(model, dev, cfg.tau, ri), dev)) >= 99.0


def test_checkpoint_round_trip(setup, tmp_path):
    fs, cfg, model, (ri, mi) = setup
    model, history = fit(fs, model, train_config(cfg), ri, mi)
    save_checkpoint(tmp_path / "a.json", model, cfg.to_dict(), 0, 0.25, history, "abc")
    loaded, meta = load_checkpoint(tmp_path / "a.json")
    assert loaded.param_checksum() == model.param_checksum()
    assert meta["threshold"] == 0.25 and meta["encoder_checksum"] == "abc"
    save_checkpoint(tmp_path / "b.json", loaded, meta["config"], 0, 0.25, history, "abc")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    probs_a = score_features(model, fs, cfg.tau, ri)
    assert np.array_equal(probs_a, score_features(loaded, fs, cfg.tau, ri))


def test_checkpoint_rejects_other_files(tmp_path):
    (tmp_path / "x.json").write_text('{"format": "other"}')
    with pytest.raises(MalformedFile):
        load_checkpoint(tmp_path / "x.json")
    (tmp_path / "y.json").write_text("nope")
    with pytest.raises(MalformedFile):
        load_checkpoint(tmp_path / "y.json")
