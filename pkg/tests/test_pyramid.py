import json

import numpy as np
import pytest
import torch

from infmae.checkpoint import save_checkpoint, to_bytes
from infmae.config import DESK_TRAIN
from infmae.exceptions import DataError, DimensionError
from infmae.model import InfMAENet, to_nchw
from infmae.pretrainer import fit_images, model_from_checkpoint
from infmae.pyramid import (
    PyramidLinearProbe,
    extract_pyramid,
    linear_probe,
    segmentation_metrics,
    write_pyramid,
)
from infmae.synthetic import blob_segmentation, infrared_like


@pytest.fixture(scope="module")
def init_ckpt():
    from infmae.config import TINY_MODEL
    return fit_images(list(infrared_like(4)), TINY_MODEL, DESK_TRAIN.replace(epochs=0))[0]


class TestExtract:
    def test_tiny_shapes(self, init_ckpt, rng):
        p = extract_pyramid(rng.random((32, 32, 1)), init_ckpt)
        assert p.shapes() == {"F1": (8, 8, 8), "F2": (4, 4, 16), "F3": (2, 2, 32), "F4": (1, 1, 32)}

    def test_rectangular(self, init_ckpt, rng):
        p = extract_pyramid(rng.random((64, 96)), init_ckpt)
        assert p.F3.shape == (4, 6, 32) and p.F4.shape == (2, 3, 32)

    def test_deterministic_and_read_only(self, init_ckpt, rng, tmp_path):
        img = rng.random((64, 64, 1))
        before = to_bytes(init_ckpt)
        a = extract_pyramid(img, init_ckpt)
        path = save_checkpoint(init_ckpt, tmp_path / "c.ckpt")
        disk_before = path.read_bytes()
        b = extract_pyramid(img, path)
        assert path.read_bytes() == disk_before and to_bytes(init_ckpt) == before
        for k in a.levels():
            assert a.levels()[k].tobytes() == b.levels()[k].tobytes()

    def test_f3_is_ts_unflattened(self, init_ckpt, rng):
        img = rng.random((64, 64, 1))
        p = extract_pyramid(img, init_ckpt)
        model = model_from_checkpoint(init_ckpt)
        with torch.no_grad():
            _, _, ts = model.forward_encoder(to_nchw(img[None]))
        np.testing.assert_array_equal(p.F3.reshape(-1, 32), ts[0].numpy())

    def test_not_multiple_of_32(self, init_ckpt):
        with pytest.raises(DimensionError):
            extract_pyramid(np.zeros((48, 64)), init_ckpt)

    def test_write(self, init_ckpt, rng, tmp_path):
        p = extract_pyramid(rng.random((32, 64)), init_ckpt)
        write_pyramid(p, tmp_path / "out")
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert [e["name"] for e in manifest["levels"]] == ["F1", "F2", "F3", "F4"]
        f4 = np.load(tmp_path / "out" / "F4.npy")
        assert list(f4.shape) == manifest["levels"][3]["shape"]
        np.testing.assert_array_equal(f4, p.F4)


class TestDownsample:
    def test_constant_sum_kernel(self, tiny_cfg):
        net = InfMAENet(tiny_cfg).double()
        with torch.no_grad():
            net.neck.weight.fill_(1.0)
            net.neck.bias.zero_()
        f3 = torch.full((1, 32, 2, 2), 0.25, dtype=torch.float64)
        out = net.downsample_f3(f3)
        assert out.shape == (1, 32, 1, 1)
        torch.testing.assert_close(out, torch.full((1, 32, 1, 1), 32.0, dtype=torch.float64))

    def test_locality(self, tiny_cfg, rng):
        net = InfMAENet(tiny_cfg).double()
        f3 = torch.as_tensor(rng.normal(size=(1, 32, 6, 4)))
        g = f3.clone()
        g[0, 5, 3, 2] += 1.0
        with torch.no_grad():
            diff = (net.downsample_f3(g) - net.downsample_f3(f3)).abs().sum(dim=1)[0]
        assert diff.shape == (3, 2)
        assert torch.nonzero(diff > 0).tolist() == [[1, 1]]

    def test_odd(self, tiny_cfg):
        with pytest.raises(DimensionError):
            InfMAENet(tiny_cfg).downsample_f3(torch.zeros(1, 32, 3, 2))


class TestProbe:
    def test_constant_labels(self, init_ckpt):
        images, _ = blob_segmentation(4, (32, 32))
        metrics = linear_probe((images, np.zeros((4, 32, 32), dtype=int)), init_ckpt, steps=5)
        assert metrics["pixel_accuracy"] == 1.0

    def test_blobs_reach_90(self, init_ckpt):
        train = blob_segmentation(16, (64, 64), seed=1)
        test = blob_segmentation(16, (64, 64), seed=2)
        metrics = linear_probe(train, init_ckpt, steps=200, evaluate=test)
        assert metrics["pixel_accuracy"] >= 0.9
        assert len(metrics["iou"]) == 2

    def test_label_mismatch(self, init_ckpt):
        images, labels = blob_segmentation(2, (32, 32))
        with pytest.raises(DataError):
            PyramidLinearProbe(init_ckpt).fit(images, labels[:, :16])

    def test_estimator_api(self, init_ckpt):
        images, labels = blob_segmentation(4, (32, 32))
        probe = PyramidLinearProbe(init_ckpt, steps=20).fit(images, labels)
        assert probe.predict(images).shape == labels.shape
        assert 0 <= probe.score(images, labels) <= 1
        assert probe.get_params()["steps"] == 20

    def test_metrics(self):
        pred = np.array([[0, 1], [1, 1]])
        lab = np.array([[0, 1], [0, 1]])
        m = segmentation_metrics(pred, lab, 2)
        assert m["pixel_accuracy"] == 0.75
        assert m["iou"] == [0.5, 2 / 3]
