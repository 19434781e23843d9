import numpy as np
import pytest
import torch

from infmae.decoder import masked_mse_loss, patchify, unpatchify
from infmae.exceptions import ConsistencyError, DimensionError
from infmae.gradcheck import finite_difference_check
from infmae.layers import sincos_pos_embed_2d
from infmae.maskgen import make_mask_plan, random_mask_plan
from infmae.model import InfMAENet, stack_plans, to_nchw


@pytest.fixture
def net(tiny_cfg):
    return InfMAENet(tiny_cfg, seed=5).double()


def brute_pool(f, k):
    b, c, h, w = f.shape
    out = np.zeros((b, c, h // k, w // k))
    for i in range(h // k):
        for j in range(w // k):
            out[:, :, i, j] = f[:, :, i * k:(i + 1) * k, j * k:(j + 1) * k].mean(axis=(2, 3))
    return out


class TestPatchify:
    def test_single_patch(self, rng):
        img = rng.random((1, 1, 16, 16))
        out = patchify(torch.as_tensor(img))
        assert out.shape == (1, 1, 256)
        np.testing.assert_array_equal(out[0, 0].numpy(), img.reshape(-1))

    @pytest.mark.parametrize("c", [1, 3])
    def test_roundtrip(self, rng, c):
        img = torch.as_tensor(rng.random((2, c, 64, 64)))
        assert torch.equal(unpatchify(patchify(img), (4, 4), c), img)

    def test_slicing_oracle(self, rng):
        img = rng.random((1, 3, 48, 32))
        p = patchify(torch.as_tensor(img)).numpy()
        for i in range(6):
            r, c = divmod(i, 2)
            block = img[0, :, 16 * r:16 * r + 16, 16 * c:16 * c + 16]
            np.testing.assert_array_equal(p[0, i], block.transpose(1, 2, 0).reshape(-1))

    def test_indivisible(self):
        with pytest.raises(DimensionError):
            patchify(torch.zeros(1, 1, 20, 16))


class TestProjectMultiscale:
    def test_constant_f1(self, net):
        v = torch.linspace(-1, 1, 8, dtype=torch.float64)
        f1 = v.view(1, 8, 1, 1).expand(1, 8, 8, 8)
        f2 = torch.zeros(1, 16, 4, 4, dtype=torch.float64)
        t1, t2, grid = net.decoder.project_multiscale_tokens(f1, f2)
        assert t1.shape == (1, 4, 32) and grid == (2, 2)
        expected = net.decoder.proj1(v)
        for row in t1[0]:
            torch.testing.assert_close(row, expected, rtol=0, atol=1e-12)

    def test_pool_oracle(self, net, rng):
        f1 = rng.normal(size=(2, 8, 16, 16))
        f2 = rng.normal(size=(2, 16, 8, 8))
        with torch.no_grad():
            net.decoder.proj1.weight.copy_(torch.eye(32, 8))
            net.decoder.proj1.bias.zero_()
            net.decoder.proj2.weight.copy_(torch.eye(32, 16))
            net.decoder.proj2.bias.zero_()
        t1, t2, _ = net.decoder.project_multiscale_tokens(torch.as_tensor(f1), torch.as_tensor(f2))
        p1 = brute_pool(f1, 4).reshape(2, 8, 16).transpose(0, 2, 1)
        p2 = brute_pool(f2, 2).reshape(2, 16, 16).transpose(0, 2, 1)
        np.testing.assert_allclose(t1[:, :, :8].detach().numpy(), p1, atol=1e-6)
        np.testing.assert_allclose(t2[:, :, :16].detach().numpy(), p2, atol=1e-6)

    def test_mismatch(self, net):
        with pytest.raises(DimensionError):
            net.decoder.project_multiscale_tokens(torch.zeros(1, 8, 8, 8), torch.zeros(1, 16, 8, 8))


class TestFuseAndRestore:
    def test_single_visible(self, net, rng):
        t1, t2 = (torch.as_tensor(rng.normal(size=(1, 4, 32))) for _ in range(2))
        ts = torch.as_tensor(rng.normal(size=(1, 1, 32)))
        fused, flags = net.decoder.fuse_and_restore(t1, t2, ts, torch.tensor([[3]]), (2, 2))
        pos = torch.as_tensor(sincos_pos_embed_2d(32, 2, 2))
        torch.testing.assert_close(fused[0, 3], net.decoder.fuse(t1[0, 3] + t2[0, 3] + ts[0, 0]) + pos[3],
                                   rtol=0, atol=1e-12)
        for i in range(3):
            torch.testing.assert_close(fused[0, i], net.decoder.mask_token[0, 0] + pos[i], rtol=0, atol=0)
        assert flags.tolist() == [[0, 0, 0, 1]]

    def test_zero_summands(self, net, rng):
        t1 = torch.as_tensor(rng.normal(size=(1, 4, 32)))
        zeros = torch.zeros_like(t1)
        ids = torch.tensor([[2, 0]])
        fused, _ = net.decoder.fuse_and_restore(t1, zeros, zeros[:, :2], ids, (2, 2))
        pos = torch.as_tensor(sincos_pos_embed_2d(32, 2, 2))
        for v in (2, 0):
            torch.testing.assert_close(fused[0, v] - pos[v], net.decoder.fuse(t1[0, v]), rtol=0, atol=1e-12)

    def test_scatter_gather_roundtrip(self, net, rng):
        for _ in range(20):
            plans = [random_mask_plan(4, 4, int(rng.integers(1, 6)), rng)]
            while len(plans) < 3:
                plans.append(random_mask_plan(4, 4, plans[0].stride, rng))
            ids = torch.as_tensor(np.stack([p.visible_ids for p in plans]))
            t1, t2 = (torch.as_tensor(rng.normal(size=(3, 16, 32))) for _ in range(2))
            ts = torch.as_tensor(rng.normal(size=(3, ids.shape[1], 32)))
            fused, flags = net.decoder.fuse_and_restore(t1, t2, ts, ids, (4, 4))
            pos = torch.as_tensor(sincos_pos_embed_2d(32, 4, 4))
            idx = ids.unsqueeze(-1).expand(-1, -1, 32)
            summed = torch.gather(t1, 1, idx) + torch.gather(t2, 1, idx) + ts
            assert torch.equal(torch.gather(fused, 1, idx), net.decoder.fuse(summed) + pos[ids])
            assert int(flags.sum()) == 3 * ids.shape[1]
            masked = flags == 0
            expected = net.decoder.mask_token[0, 0] + pos.expand(3, -1, -1)[masked]
            assert torch.equal(fused[masked], expected)

    def test_id_mismatch(self, net):
        with pytest.raises(ConsistencyError):
            net.decoder.fuse_and_restore(torch.zeros(1, 4, 32), torch.zeros(1, 4, 32),
                                         torch.zeros(1, 2, 32), torch.tensor([[1]]), (2, 2))


class TestDecodeTokens:
    def test_shape(self, net, rng):
        out = net.decoder.decode_tokens(torch.as_tensor(rng.normal(size=(2, 16, 32))))
        assert out.shape == (2, 16, 256)

    def test_depth_zero(self, tiny_cfg, rng):
        net = InfMAENet(tiny_cfg.replace(decoder_depth=0, in_channels=3)).double()
        x = torch.as_tensor(rng.normal(size=(1, 4, 32)))
        out = net.decoder.decode_tokens(x)
        assert out.shape == (1, 4, 768)
        torch.testing.assert_close(out, net.decoder.head(net.decoder.norm(x)), rtol=0, atol=0)

    def test_decoder_gradients(self, tiny_cfg):
        report = finite_difference_check(tiny_cfg, only="decoder.", n_coords=120)
        assert report.passed, report.worst


class TestMaskedMSE:
    def setup_case(self, rng, c=1):
        img = rng.random((2, 64, 64, c))
        plans = [make_mask_plan(im, 4) for im in img]
        x = to_nchw(img, torch.float64)
        return x, stack_plans(plans, dtype=torch.float64), plans

    def test_perfect(self, rng):
        x, batch, _ = self.setup_case(rng)
        assert float(masked_mse_loss(patchify(x), x, batch.masked)) == 0.0

    def test_visible_rows_ignored(self, rng):
        x, batch, _ = self.setup_case(rng)
        pred = torch.as_tensor(rng.normal(size=(2, 16, 256)))
        base = masked_mse_loss(pred, x, batch.masked)
        noisy = pred + torch.as_tensor(rng.normal(size=pred.shape)) * (1 - batch.masked).unsqueeze(-1)
        assert float(masked_mse_loss(noisy, x, batch.masked)) == float(base)

    @pytest.mark.parametrize("c", [1, 3])
    def test_single_pixel_closed_form(self, rng, c):
        x, batch, plans = self.setup_case(rng, c)
        pred = patchify(x).clone()
        delta = 0.37
        m = int(plans[1].masked_ids[5])
        pred[1, m, 17] += delta
        n_masked = int(batch.masked.sum())
        expected = delta ** 2 / (256 * c * n_masked)
        assert abs(float(masked_mse_loss(pred, x, batch.masked)) - expected) < 1e-10

    def test_per_image_mode(self, rng):
        x, batch, plans = self.setup_case(rng)
        pred = patchify(x).clone()
        pred[0, int(plans[0].masked_ids[0]), 0] += 0.5
        assert abs(float(masked_mse_loss(pred, x, batch.masked, mode="per_image")) - 0.25 / 2) < 1e-12

    def test_normalize_pix_zero(self, rng):
        x, batch, _ = self.setup_case(rng)
        t = patchify(x)
        norm = (t - t.mean(-1, keepdim=True)) / (t.var(-1, keepdim=True) + 1e-6) ** 0.5
        assert float(masked_mse_loss(norm, x, batch.masked, normalize_pix=True)) == 0.0

    def test_mismatch(self, rng):
        x, batch, _ = self.setup_case(rng)
        with pytest.raises(ConsistencyError):
            masked_mse_loss(torch.zeros(2, 9, 256, dtype=torch.float64), x, batch.masked)


class TestForwardPretrain:
    def test_finite_nonnegative(self, net, rng):
        for _ in range(5):
            imgs = rng.normal(size=(2, 64, 64, 1))
            loss, pred = net.forward_pretrain(to_nchw(imgs, torch.float64), net.make_plans(imgs))
            assert torch.isfinite(loss) and loss.item() >= 0
            assert pred.shape == (2, 16, 256)

    def test_deterministic_bits(self, tiny_cfg, rng):
        imgs = rng.random((2, 64, 64, 1))
        vals = []
        for _ in range(2):
            net = InfMAENet(tiny_cfg, seed=9)
            vals.append(net.forward_pretrain(to_nchw(imgs), net.make_plans(imgs))[0].item())
        assert np.float64(vals[0]).tobytes() == np.float64(vals[1]).tobytes()

    def test_end_to_end_gradients(self, tiny_cfg):
        report = finite_difference_check(tiny_cfg, n_coords=200, seed=1)
        assert report.passed, report.worst
