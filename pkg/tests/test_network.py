import numpy as np
import pytest
import torch

from wstal.model import DTYPE
from wstal.network import LocalizationNetwork, ModelConfig


def make_net(seed=0, **kwargs):
    torch.manual_seed(seed)
    base = dict(num_classes=3, in_dim=8, embed_dim=6, num_codewords=4, sparse_topk=8)
    base.update(kwargs)
    return LocalizationNetwork(ModelConfig(**base))


class TestMainBranch:
    def test_shapes(self):
        net = make_net()
        out = net.main_branch(torch.randn(10, 8, dtype=DTYPE))
        assert out.embeddings.shape == (10, 6)
        assert out.cam.shape == (10, 4)
        assert out.attention.shape == (10, 3)
        for branch in ("ins", "con", "back"):
            assert out.weighted[branch].shape == (10, 4)
            assert out.scores[branch].shape == (4,)
            np.testing.assert_allclose(out.scores[branch].sum().item(), 1.0, atol=1e-6)

    def test_batched_matches_single(self):
        net = make_net(seed=1)
        x = torch.randn(3, 10, 8, dtype=DTYPE)
        batched = net.main_branch(x)
        for b in range(3):
            single = net.main_branch(x[b])
            assert torch.equal(batched.cam[b], single.cam)
            assert torch.equal(batched.weighted["ins"][b], single.weighted["ins"])

    def test_weighted_cam_recomposition(self):
        # the three branch CAMs recompose the raw CAM because attention rows sum to 1
        net = make_net(seed=2)
        out = net.main_branch(torch.randn(7, 8, dtype=DTYPE))
        total = sum(out.weighted[b] for b in ("ins", "con", "back"))
        np.testing.assert_allclose(total.detach().numpy(), out.cam.detach().numpy(), atol=1e-9)


class TestSharedHead:
    def test_pseudo_branch_reuses_head_object(self):
        net = make_net()
        assert net.cam_head is not None
        # mutating the head bias must shift both CAMs identically
        x = torch.randn(6, 8, dtype=DTYPE)
        summary = torch.randn(4, 6, dtype=DTYPE)
        with torch.no_grad():
            out1 = net.main_branch(x)
            ps1 = net.pseudo_branch(out1.embeddings, summary)
            net.cam_head.proj.bias += 0.25
            out2 = net.main_branch(x)
            ps2 = net.pseudo_branch(out2.embeddings, summary)
        np.testing.assert_allclose(
            (out2.cam - out1.cam).numpy(), np.full((6, 4), 0.25), atol=1e-12
        )
        np.testing.assert_allclose(
            (ps2.cam - ps1.cam).numpy(), np.full((6, 4), 0.25), atol=1e-12
        )

    def test_identical_features_identical_cam(self):
        net = make_net(seed=3)
        feats = torch.randn(5, 6, dtype=DTYPE)
        assert torch.equal(net.cam_head(feats), net.cam_head(feats.clone()))


class TestLocalize:
    def test_main_source_ignores_summary(self):
        net = make_net(seed=4)
        x = torch.randn(9, 8, dtype=DTYPE)
        summary = torch.randn(4, 6, dtype=DTYPE)
        with torch.no_grad():
            cam_a, scores_a = net.localize(x, summary=summary, source="main")
            cam_b, scores_b = net.localize(x, summary=None, source="main")
        assert torch.equal(cam_a, cam_b)
        assert torch.equal(scores_a, scores_b)

    def test_auto_prefers_pseudo_when_summary_present(self):
        net = make_net(seed=5, fusion_zero_init=False)
        x = torch.randn(9, 8, dtype=DTYPE)
        summary = torch.randn(4, 6, dtype=DTYPE)
        with torch.no_grad():
            cam_auto, _ = net.localize(x, summary=summary, source="auto")
            cam_pseudo, _ = net.localize(x, summary=summary, source="pseudo")
            cam_main, _ = net.localize(x, summary=None, source="auto")
            cam_main2, _ = net.localize(x, source="main")
        assert torch.equal(cam_auto, cam_pseudo)
        assert torch.equal(cam_main, cam_main2)

    def test_mean_source_averages(self):
        net = make_net(seed=6, fusion_zero_init=False)
        x = torch.randn(9, 8, dtype=DTYPE)
        summary = torch.randn(4, 6, dtype=DTYPE)
        with torch.no_grad():
            out = net.main_branch(x)
            pseudo = net.pseudo_branch(out.embeddings, summary)
            expect = 0.5 * (out.cam + pseudo.cam) * out.attention[:, 0:1]
            cam_mean, _ = net.localize(x, summary=summary, source="mean")
        np.testing.assert_allclose(cam_mean.numpy(), expect.numpy(), atol=1e-12)

    def test_pseudo_without_summary_rejected(self):
        net = make_net()
        with pytest.raises(ValueError, match="summary"):
            net.localize(torch.randn(5, 8, dtype=DTYPE), source="pseudo")

    def test_unknown_source_rejected(self):
        net = make_net()
        with pytest.raises(ValueError, match="source"):
            net.localize(torch.randn(5, 8, dtype=DTYPE), source="bogus")


class TestConfig:
    def test_unresolved_dims_rejected(self):
        with pytest.raises(ValueError, match="resolved"):
            LocalizationNetwork(ModelConfig())

    def test_validation(self):
        with pytest.raises(ValueError):
            ModelConfig(num_classes=0)
        with pytest.raises(ValueError):
            ModelConfig(topk_ratio=0)
