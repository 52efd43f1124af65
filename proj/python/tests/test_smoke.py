import numpy as np
import pytest

import chimera


def test_default_taxonomy_counts():
    assert chimera.validate_taxonomy() == {"domains": 6, "parts": 48, "atoms": 464}


def test_prompt_and_seed():
    text = chimera.render_prompt("A creature", [("head", "lion"), ("body", "horse")])
    assert text == "A creature with head of a lion and body of a horse."
    assert chimera.derive_seed("a") == 0xAF63DC4C8601EC8C


def test_corpus_is_deterministic():
    a = chimera.generate_corpus(20, seed=4)
    b = chimera.generate_corpus(20, seed=4)
    assert a == b
    assert len(a) == 20
    for record in a:
        assert 2 <= len(record["atoms"]) <= 4
        assert record["seed"] == chimera.derive_seed(record["text"])


def test_world_round_trip():
    world = chimera.World()
    assert world.dim == 64
    assert world.atom_count == 464
    atoms = world.atoms()[:1] + world.atoms()[40:41] + world.atoms()[300:301]
    target = world.compose(atoms)
    assert target.shape == (64,)
    assert np.linalg.norm(target) == pytest.approx(1.0)
    assert world.decode(target, 3) == atoms
    assert world.compositional_accuracy(target[None, :], [atoms]) == 1.0


def test_unknown_atom_raises():
    with pytest.raises(chimera.ChimeraError):
        chimera.World().compose([("wing", "teapot"), ("head", "lion")])


def test_metrics():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(200, 4))
    assert abs(chimera.fid(x, x)) < 1e-8
    assert chimera.fid(x, x + 1.0) == pytest.approx(4.0, abs=1e-8)
    mean, std = chimera.kid(x, rng.normal(size=(200, 4)), subset_size=50, subsets=5)
    assert abs(mean) <= 3 * std + 1e-12
    assert chimera.mmd2_unbiased(x[:3], x[3:6]) == pytest.approx(chimera.mmd2_unbiased(x[:3], x[3:6]))


def test_parteval():
    qs = chimera.parteval_questions(
        "wing", "bat", {"color": "black", "texture": "leathery", "spatial_relation": "on the back"}
    )
    assert [q["attribute"] for q in qs] == ["object", "part", "color", "texture", "spatial_relation"]
    assert qs[0]["text"] == "Is the wing recognizably that of a bat?"
    assert len(chimera.parteval_questions("wing", "bat")) == 2
    assert chimera.parteval_score([[1, 1, 0, 1, 1, 0, 1, 1, 0, 1]]) == pytest.approx(0.7)
    with pytest.raises(chimera.ChimeraError):
        chimera.parteval_score([[1, 0], [1, 0, 1]])
