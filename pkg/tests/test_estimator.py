import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.linear_model import LogisticRegression
from sklearn.pipeline import make_pipeline

from infmae import InfMAE
from infmae.synthetic import blob_segmentation, infrared_like


@pytest.fixture(scope="module")
def fitted():
    return InfMAE(epochs=2, warmup_epochs=1, batch_size=4).fit(infrared_like(8))


def test_params_roundtrip():
    est = InfMAE(mask_stride=2, decoder_depth=1, masking="random", epochs=3)
    params = est.get_params()
    assert params["mask_stride"] == 2 and params["masking"] == "random"
    twin = clone(est)
    assert twin.get_params() == params
    model_cfg, train_cfg = est._configs()
    assert (model_cfg.mask_stride, model_cfg.decoder_depth, model_cfg.masking) == (2, 1, "random")
    assert train_cfg.epochs == 3


def test_not_fitted():
    with pytest.raises(NotFittedError):
        InfMAE().transform(np.zeros((1, 32, 32, 1)))


def test_fit_transform(fitted):
    X = infrared_like(3, (64, 64), seed=5)
    Z = fitted.transform(X)
    assert Z.shape == (3, fitted.n_features_out_) == (3, 8 + 16 + 32 + 32)
    assert len(fitted.history_) == 4
    assert np.isfinite(fitted.score(X))


def test_pipeline_composition(fitted):
    images, labels = blob_segmentation(12, (32, 32), seed=3)
    y = (labels.mean(axis=(1, 2)) > np.median(labels.mean(axis=(1, 2)))).astype(int)
    pipe = make_pipeline(fitted, LogisticRegression(max_iter=200))
    # the pretrained step is already fitted; refitting it inside the pipeline is allowed too
    pipe.fit(images, y)
    assert pipe.predict(images).shape == (12,)


def test_save_and_reload(fitted, tmp_path):
    path = fitted.save(tmp_path / "m.ckpt")
    again = InfMAE.from_checkpoint(path)
    X = infrared_like(2, (32, 32), seed=9)
    np.testing.assert_array_equal(again.transform(X), fitted.transform(X))
    p = again.extract_pyramid(X[0])
    assert p.F4.shape == (1, 1, 32)


def test_channel_mismatch():
    with pytest.raises(ValueError):
        InfMAE(epochs=0).fit(np.zeros((2, 64, 64, 3)))
