import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from kgprompt.config import RunConfig  # noqa: E402
from kgprompt.model import PromptModel  # noqa: E402


def minimal_graph_doc():
    return {
        "categories": ["3D mask", "real face"],
        "relations": ["related_to"],
        "entities": [
            {"id": "mask_a", "text": "seam", "dimension": "inherent_characteristic", "category": "3D mask"},
            {"id": "real_a", "text": "skin", "dimension": "inherent_characteristic", "category": "real face"},
        ],
        "triples": [],
    }


@pytest.fixture
def minimal_doc():
    return minimal_graph_doc()


@pytest.fixture
def minimal_bytes():
    return json.dumps(minimal_graph_doc()).encode()


def random_model(rng, m=4, K=2, enc_dim=6, hidden=5, L=2, max_rows=4):
    """PromptModel with every parameter drawn at random (no identity init)."""
    return PromptModel(
        categories=tuple(f"c{k}" for k in range(K)),
        entity_rows=[rng.normal(size=(rng.integers(1, max_rows + 1), m)) for _ in range(K)],
        desc_rows=[rng.normal(size=(rng.integers(1, max_rows + 1), m)) for _ in range(K)],
        class_emb=rng.normal(size=(K, m)),
        params={
            "context": rng.normal(size=(K, L, m)),
            "adapt.W1": rng.normal(size=(enc_dim, hidden)), "adapt.b1": rng.normal(size=hidden),
            "adapt.W2": rng.normal(size=(hidden, m)), "adapt.b2": rng.normal(size=m),
            "filter_e.Psi": rng.normal(size=(m, m)), "filter_e.bias": rng.normal(size=m),
            "filter_d.Psi": rng.normal(size=(m, m)), "filter_d.bias": rng.normal(size=m),
        },
    )


# small end-to-end configuration: 64x64 images, 4x4 patch grid, width 16
TOY = dict(image_size=64, patch_grid=4, embed_dim=16, encoder_dim=32, hidden_dim=32, batch_size=16)


@pytest.fixture
def toy_cfg():
    return RunConfig(**TOY, epochs=5, train_subjects=2, dev_subjects=2, rounds=2)


@pytest.fixture(scope="session")
def toy_features():
    """Encoded 6-subject two-cluster set shared across tests."""
    from kgprompt.data import encode_arrays
    from kgprompt.encoder import ToyEncoder
    from kgprompt.synthetic import generate

    images, rows = generate(n_subjects=6, per_class=8, seed=1)
    return encode_arrays(images, rows, ToyEncoder(64, 4, 32, 0)), rows
