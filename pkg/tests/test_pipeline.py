import numpy as np
import pytest

from kgprompt.config import RunConfig
from kgprompt.encoder import ToyEncoder
from kgprompt.errors import BackendUnavailable, ValidationError
from kgprompt.encoder import ExternalEncoder
from kgprompt.pipeline import build_model, class_probabilities, label_indices, score_sample, train_config
from kgprompt.synthetic import generate
from kgprompt.trainer import fit

CFG = RunConfig(image_size=64, patch_grid=4, embed_dim=16, encoder_dim=32, hidden_dim=32, batch_size=16)


@pytest.fixture(scope="module")
def trained(toy_features):
    fs, _ = toy_features
    model = build_model(CFG)
    ri, mi = label_indices(model, CFG)
    model, _ = fit(fs, model, train_config(CFG), ri, mi)
    return model, ri


def test_probabilities_sum_to_one(trained):
    model, _ = trained
    img = generate(n_subjects=1, per_class=1, seed=11)[0][0]
    d = score_sample(img, model, ToyEncoder(64, 4, 32), CFG.tau)
    assert d.shape == (2,) and abs(d.sum() - 1) < 1e-6


def test_identical_images_identical_scores(trained):
    model, _ = trained
    img = generate(n_subjects=1, per_class=1, seed=12)[0][0]
    enc = ToyEncoder(64, 4, 32)
    assert np.array_equal(score_sample(img, model, enc, CFG.tau), score_sample(img.copy(), model, enc, CFG.tau))


def test_real_cluster_sample_scored_real(trained):
    model, ri = trained
    images, rows = generate(n_subjects=1, per_class=3, seed=99, prefix="new")
    enc = ToyEncoder(64, 4, 32)
    for img, row in zip(images, rows):
        d = score_sample(img, model, enc, CFG.tau)
        assert (d[ri] > 0.5) == row.is_genuine


def test_batched_and_per_sample_agree(trained, toy_features):
    model, ri = trained
    fs, _ = toy_features
    from kgprompt.encoder import EncoderOutput

    batched = class_probabilities(model, fs.take(range(4)), CFG.tau)
    single = np.stack([model.predict(EncoderOutput(fs.global_feats[i], fs.patch_feats[i]), CFG.tau)
                       for i in range(4)])
    assert np.allclose(batched, single, atol=1e-12)


def test_external_backend_unavailable(trained):
    model, _ = trained
    with pytest.raises(BackendUnavailable):
        score_sample(np.zeros((64, 64, 3)), model, ExternalEncoder(None, 64), CFG.tau)


def test_unknown_category_names():
    model = build_model(CFG)
    with pytest.raises(ValidationError):
        label_indices(model, CFG.with_overrides(real_category="bona fide"))
