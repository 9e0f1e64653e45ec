import numpy as np
import pytest

from components.errors import ConfigError, NumericError
from components.losses.adversarial import hinge_d, hinge_g
from components.losses.feature_losses import FeatureBackbone, gram, perceptual, style_loss
from components.losses.reconstruction import l1_recon, patch_loss
from components.losses.total import check_signs, total_loss
from components.tensor import ops
from components.tensor.gradcheck import finite_diff_check
from components.tensor.tensor import Tensor
from models.completion_config import BackboneConfig, LossWeights

COMPONENTS_1_TO_5 = {"adversarial": 1.0, "perceptual": 2.0, "patch": 3.0, "style": 4.0, "reconstruction": 5.0}


def scores(values):
    return Tensor(np.asarray(values, dtype=float).reshape(1, 1, 1, -1))


class TestHinge:
    @pytest.mark.parametrize("real, fake, expected", [(1.0, -1.0, 0.0), (0.0, 0.0, 2.0), (2.0, -3.0, 0.0)])
    def test_discriminator_margins(self, real, fake, expected):
        assert hinge_d(scores([real]), scores([fake])).item() == expected

    def test_generator(self):
        assert hinge_g(scores([1.0, 3.0])).item() == -2.0
        assert hinge_g(scores([0.0, 0.0])).item() == 0.0

    def test_generator_gradient(self, tiny_model_config, rng):
        from components.network.discriminator import PatchDiscriminator

        discriminator = PatchDiscriminator(tiny_model_config)
        image = Tensor(rng.uniform(-1, 1, size=(1, 3, 8, 8)), requires_grad=True)
        weighted = np.full((1, 8, 8), 0.5)
        assert finite_diff_check(lambda: hinge_g(discriminator(image, weighted)), [image]) < 1e-4

    def test_discriminator_gradient(self, rng):
        real = Tensor(rng.normal(size=(2, 1, 2, 2)), requires_grad=True)
        fake = Tensor(rng.normal(size=(2, 1, 2, 2)), requires_grad=True)
        assert finite_diff_check(lambda: hinge_d(real, fake), [real, fake]) < 1e-4


class TestReconstruction:
    def test_l1_values(self, rng):
        gt = Tensor(np.full((1, 3, 4, 4), 0.5))
        assert l1_recon(gt, gt, gt).item() == 0.0
        assert l1_recon(gt, gt, Tensor(np.full((1, 3, 4, 4), 0.25))).item() == 0.25

    def test_l1_oracle(self, rng):
        gt, coarse, refined = (rng.normal(size=(2, 3, 4, 4)) for _ in range(3))
        expected = np.mean(np.abs(gt - coarse)) + np.mean(np.abs(gt - refined))
        assert abs(l1_recon(Tensor(gt), Tensor(coarse), Tensor(refined)).item() - expected) < 1e-12

    def test_patch_values(self):
        gt = Tensor(np.zeros((1, 1, 2, 2)))
        refined = Tensor(np.array([0.1, 0.7, 0.3, 0.9]).reshape(1, 1, 2, 2))
        assert patch_loss(np.zeros((1, 2, 2), dtype=bool), gt, refined).item() == 0.0
        mask = np.array([[[True, False], [True, False]]])
        assert patch_loss(mask, gt, refined).item() == pytest.approx(0.2, abs=1e-15)

    def test_patch_oracle_and_gradient(self, rng):
        gt = Tensor(rng.normal(size=(2, 3, 5, 5)))
        refined = Tensor(rng.normal(size=(2, 3, 5, 5)), requires_grad=True)
        mask = rng.random((2, 5, 5)) > 0.6
        expected = np.sum(np.abs(gt.data - refined.data) * mask[:, None]) / (mask.sum() * 3)
        assert abs(patch_loss(mask, gt, refined).item() - expected) < 1e-12
        assert finite_diff_check(lambda: patch_loss(mask, gt, refined), [refined]) < 1e-4

    def test_l1_gradient(self, rng):
        gt = Tensor(rng.normal(size=(1, 2, 4, 4)))
        coarse = Tensor(rng.normal(size=(1, 2, 4, 4)), requires_grad=True)
        refined = Tensor(rng.normal(size=(1, 2, 4, 4)), requires_grad=True)
        assert finite_diff_check(lambda: l1_recon(gt, coarse, refined), [coarse, refined]) < 1e-4


class TestFeatureLosses:
    @pytest.fixture
    def backbone(self, tiny_backbone_config):
        return FeatureBackbone(tiny_backbone_config)

    def test_backbone_is_deterministic(self, tiny_backbone_config, rng):
        x = Tensor(rng.normal(size=(1, 3, 8, 8)))
        a = FeatureBackbone(tiny_backbone_config).features(x, ["block3", "block4"])
        b = FeatureBackbone(tiny_backbone_config).features(x, ["block3", "block4"])
        assert np.array_equal(a["block4"].data, b["block4"].data)
        assert a["block3"].shape == (1, 3, 2, 2)
        assert not any(t.requires_grad for t in FeatureBackbone(tiny_backbone_config).blocks[0].parameters().values())

    def test_perceptual_values(self, backbone, rng):
        out = Tensor(rng.normal(size=(2, 3, 8, 8)))
        gt = Tensor(rng.normal(size=(2, 3, 8, 8)))
        assert perceptual(backbone, gt, gt, ["block4"]).item() == 0.0
        identity = perceptual(backbone, out, gt, ["input"]).item()
        assert identity == pytest.approx(np.mean(np.abs(out.data - gt.data)), abs=1e-15)

    def test_perceptual_two_taps_oracle(self, backbone, rng):
        out = Tensor(rng.normal(size=(1, 3, 8, 8)))
        gt = Tensor(rng.normal(size=(1, 3, 8, 8)))
        expected = 0.0
        for tap in ("block2", "block4"):
            expected += np.mean(np.abs(backbone.features(out, [tap])[tap].data - backbone.features(gt, [tap])[tap].data))
        assert abs(perceptual(backbone, out, gt, ["block2", "block4"]).item() - expected) < 1e-10

    def test_unknown_tap(self, backbone, rng):
        x = Tensor(rng.normal(size=(1, 3, 8, 8)))
        with pytest.raises(ConfigError):
            perceptual(backbone, x, x, ["conv4_3"])
        with pytest.raises(ConfigError):
            style_loss(backbone, x, x, ["block9"])

    def test_gram_values(self, rng):
        features = np.stack([np.ones((2, 2)), np.full((2, 2), 2.0)])[None]
        assert np.allclose(gram(Tensor(features)).data, [[0.5, 1.0], [1.0, 2.0]])
        assert np.all(gram(Tensor(np.zeros((1, 3, 2, 2)))).data == 0.0)
        g = gram(Tensor(rng.normal(size=(1, 4, 3, 3)))).data
        assert np.array_equal(g, g.T)

    def test_style_is_position_blind(self, rng):
        backbone = FeatureBackbone(BackboneConfig(widths=(3, 3, 3, 3)), kernel=1, downsample=False)
        gt = rng.normal(size=(1, 3, 6, 6))
        flat = gt.reshape(1, 3, 36)
        permuted = flat[:, :, rng.permutation(36)].reshape(1, 3, 6, 6)
        assert style_loss(backbone, Tensor(gt), Tensor(gt), ["block2"]).item() == 0.0
        assert style_loss(backbone, Tensor(permuted), Tensor(gt), ["block2"]).item() < 1e-12

    def test_style_oracle(self, backbone, rng):
        out = Tensor(rng.normal(size=(2, 3, 8, 8)))
        gt = Tensor(rng.normal(size=(2, 3, 8, 8)))
        taps = ["block3", "block4"]
        expected = 0.0
        for tap in taps:
            fo, fg = backbone.features(out, [tap])[tap].data, backbone.features(gt, [tap])[tap].data
            for i in range(2):
                c, h, w = fo[i].shape
                go = fo[i].reshape(c, -1) @ fo[i].reshape(c, -1).T / (c * h * w)
                gg = fg[i].reshape(c, -1) @ fg[i].reshape(c, -1).T / (c * h * w)
                expected += np.mean(np.abs(go - gg)) / 2
        assert abs(style_loss(backbone, out, gt, taps).item() - expected) < 1e-10

    def test_gradients(self, backbone, rng):
        out = Tensor(rng.normal(size=(1, 3, 8, 8)), requires_grad=True)
        gt = Tensor(rng.normal(size=(1, 3, 8, 8)))
        assert finite_diff_check(lambda: perceptual(backbone, out, gt, ["block4"]), [out]) < 1e-4
        assert finite_diff_check(lambda: style_loss(backbone, out, gt, ["block3", "block4"]), [out]) < 1e-4

    def test_weight_import(self, tiny_backbone_config):
        source = FeatureBackbone(tiny_backbone_config.model_copy(update={"seed": 99}))
        target = FeatureBackbone(tiny_backbone_config)
        target.load_arrays(source.arrays())
        for name, array in source.arrays().items():
            assert np.array_equal(target.arrays()[name], array)


class TestTotalLoss:
    def test_default_weights(self):
        total, report = total_loss(LossWeights(), COMPONENTS_1_TO_5)
        assert total.item() == 735.0
        assert report.total == 735.0
        assert report.perceptual == 2.0

    def test_all_zero(self):
        total, _ = total_loss(LossWeights(), dict.fromkeys(COMPONENTS_1_TO_5, 0.0))
        assert total.item() == 0.0

    def test_ablation_excludes_term_but_reports_it(self):
        weights = LossWeights().ablated(["patch"])
        total, report = total_loss(weights, COMPONENTS_1_TO_5)
        assert total.item() == 705.0
        assert report.patch == 3.0
        assert report.weighted["patch"] == 0.0

    def test_ablated_term_has_no_gradient(self):
        patch = Tensor(3.0, requires_grad=True)
        perceptual_term = Tensor(2.0, requires_grad=True)
        components = dict(COMPONENTS_1_TO_5, patch=patch, perceptual=perceptual_term)
        total, _ = total_loss(LossWeights().ablated(["patch"]), components)
        total.backward()
        assert patch.grad is None
        assert perceptual_term.grad.item() == 100.0

    def test_linear_in_each_weight(self):
        base, _ = total_loss(LossWeights(), COMPONENTS_1_TO_5)
        doubled, _ = total_loss(LossWeights(style=2.0), COMPONENTS_1_TO_5)
        assert doubled.item() - base.item() == 4.0

    def test_nan_names_component(self):
        with pytest.raises(NumericError) as info:
            total_loss(LossWeights(), dict(COMPONENTS_1_TO_5, style=float("nan")))
        assert info.value.component == "style"

    def test_sign_check(self):
        _, report = total_loss(LossWeights(), dict(COMPONENTS_1_TO_5, adversarial=-4.0))
        check_signs(report)
        _, report = total_loss(LossWeights(), dict(COMPONENTS_1_TO_5, patch=-1.0))
        with pytest.raises(NumericError):
            check_signs(report)
