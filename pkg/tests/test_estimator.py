import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from recfield.estimator import FieldCodec
from recfield.rendering import Camera

from test_training import micro_dataset


def tiny_codec(**kw):
    defaults = dict(kind="sdf", latent_dim=8, max_lod=2, phi_hidden=16,
                    head_hidden=8, samples_per_object=16, max_steps=10, seed=3)
    defaults.update(kw)
    return FieldCodec(**defaults)


def test_get_set_params_and_clone():
    codec = tiny_codec(lr_net=5e-4)
    params = codec.get_params()
    assert params["latent_dim"] == 8 and params["lr_net"] == 5e-4
    other = clone(codec)
    assert other.get_params() == params
    codec.set_params(max_steps=3)
    assert codec.max_steps == 3


def test_requires_fit_before_use():
    codec = tiny_codec()
    with pytest.raises(NotFittedError):
        codec.reconstruct("a")
    with pytest.raises(NotFittedError):
        codec.decode("a", np.zeros((1, 3)))


def test_fit_validates_inputs():
    codec = tiny_codec()
    with pytest.raises(ValueError):
        codec.fit([])
    with pytest.raises(TypeError):
        codec.fit([object()])


def test_fit_and_downstream_surfaces():
    dataset = micro_dataset("sdf")
    codec = tiny_codec().fit(dataset)
    assert codec.object_ids_ == ["a", "b"]
    assert codec.report_.steps_run == 10

    out = codec.decode("a", dataset[0].coords[:5].astype(np.float64))
    assert out["sdf"].shape == (5,)

    cloud = codec.reconstruct("a")
    assert cloud.points.shape[1] == 3

    cam = Camera.look_at([0, 0, -2.5], [0, 0, 0], width=6, height=6)
    img, aux = codec.render("a", cam, renderer="sphere")
    assert img.shape == (6, 6, 3)

    report = codec.evaluate(dataset)
    assert [r.object_id for r in report.rows] == ["a", "b"]

    score = codec.score(dataset)
    assert np.isfinite(score) and score <= 0.0


def test_fit_is_deterministic_given_seed():
    dataset = micro_dataset("sdf")
    a = tiny_codec().fit(dataset)
    b = tiny_codec().fit(dataset)
    assert a.report_.final_loss == b.report_.final_loss
