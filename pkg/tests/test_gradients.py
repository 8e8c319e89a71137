"""Autograd verification by central finite differences in float64.

Every module with learned parameters is checked: the two small heads
exhaustively, the full episode loss on sampled coordinates of every
parameter tensor. Relative error against the h=1e-5 central difference
must stay under 1e-4.
"""

import numpy as np
import torch

from proxynet.backbones import BackboneConfig
from proxynet.model import ModelConfig, build_model
from proxynet.proxy import WeightNet
from proxynet.relation import RelationScorer3D, SqueezeExcite3D, episode_loss

H_STEP = 1e-5
TOL = 1e-4


def max_rel_err(loss_fn, params, per_tensor=None, h=H_STEP, seed=0):
    """Worst relative disagreement between autograd and central differences.

    Coordinates where both values sit below the finite-difference noise floor
    are skipped rather than scored as agreement.
    """
    rng = np.random.default_rng(seed)
    params = [p for p in params if p.requires_grad]
    for p in params:
        p.grad = None
    loss_fn().backward()
    worst = 0.0
    with torch.no_grad():
        for p in params:
            grad = p.grad.reshape(-1)
            flat = p.data.reshape(-1)
            n = flat.numel()
            if per_tensor is None or per_tensor >= n:
                idxs = range(n)
            else:
                idxs = sorted(rng.choice(n, size=per_tensor, replace=False).tolist())
            for i in idxs:
                orig = float(flat[i])
                flat[i] = orig + h
                f_plus = float(loss_fn())
                flat[i] = orig - h
                f_minus = float(loss_fn())
                flat[i] = orig
                fd = (f_plus - f_minus) / (2.0 * h)
                a = float(grad[i])
                denom = max(abs(a), abs(fd))
                if denom < 1e-7:
                    continue
                worst = max(worst, abs(a - fd) / denom)
    return worst


def weighted_sum(out, seed):
    """Fixed random projection to a scalar, so no gradient direction cancels."""
    g = torch.Generator().manual_seed(seed)
    coeffs = torch.randn(out.shape, generator=g, dtype=out.dtype)
    return (out * coeffs).sum()


class TestHeadGradients:
    def test_weight_net_exhaustive(self):
        torch.manual_seed(0)
        net = WeightNet(3, hidden=4).double().train()
        g = torch.Generator().manual_seed(1)
        x = torch.randn(4, 3, 5, 5, generator=g, dtype=torch.float64)
        s = torch.randn(4, 3, 5, 5, generator=g, dtype=torch.float64)
        err = max_rel_err(lambda: weighted_sum(net(x, s), seed=2), net.parameters())
        assert err < TOL, err

    def test_squeeze_excite_exhaustive(self):
        torch.manual_seed(3)
        se = SqueezeExcite3D(4, ratio=2).double().train()
        g = torch.Generator().manual_seed(4)
        x = torch.randn(2, 4, 2, 3, 3, generator=g, dtype=torch.float64)
        err = max_rel_err(lambda: weighted_sum(se(x), seed=5), se.parameters())
        assert err < TOL, err

    def test_relation_scorer_exhaustive(self):
        torch.manual_seed(6)
        scorer = RelationScorer3D(3, widths=(3, 2), se_ratio=3).double().train()
        g = torch.Generator().manual_seed(7)
        stacks = torch.randn(4, 3, 2, 3, 3, generator=g, dtype=torch.float64)
        err = max_rel_err(lambda: weighted_sum(scorer(stacks), seed=8), scorer.parameters())
        assert err < TOL, err


class TestEpisodeGradients:
    def test_full_model_sampled_coordinates(self):
        torch.manual_seed(9)
        config = ModelConfig(backbone=BackboneConfig(name="conv4", width=4))
        model = build_model(config).double().train()

        g = torch.Generator().manual_seed(10)
        sx = torch.randn(4, 3, 84, 84, generator=g, dtype=torch.float64)
        sy = torch.tensor([0, 0, 1, 1])
        qx = torch.randn(2, 3, 84, 84, generator=g, dtype=torch.float64)
        qy = torch.tensor([0, 1])

        def loss_fn():
            return episode_loss(model(sx, sy, qx, 2), qy)

        err = max_rel_err(loss_fn, model.parameters(), per_tensor=4)
        assert err < TOL, err

    def test_all_parameter_tensors_receive_gradient(self):
        torch.manual_seed(2)
        model = build_model(ModelConfig(backbone=BackboneConfig(width=4))).train()
        g = torch.Generator().manual_seed(102)
        sx = torch.randn(4, 3, 84, 84, generator=g)
        qx = torch.randn(2, 3, 84, 84, generator=g)
        loss = episode_loss(model(sx, torch.tensor([0, 0, 1, 1]), qx, 2),
                            torch.tensor([0, 1]))
        loss.backward()
        for name, p in model.named_parameters():
            assert p.grad is not None, name
            assert torch.isfinite(p.grad).all(), name
            if name == "proxy.weight_net.score.bias":
                continue  # checked separately: structurally flat under softmax
            # a completely dead tensor would zero every coordinate
            assert float(p.grad.abs().sum()) > 0.0, name

    def test_score_bias_is_flat_under_softmax(self):
        # the scoring bias shifts every support logit in a class equally and
        # softmax ignores a common shift, so its true gradient is zero
        torch.manual_seed(13)
        model = build_model(ModelConfig(backbone=BackboneConfig(width=4))).train()
        g = torch.Generator().manual_seed(14)
        sx = torch.randn(4, 3, 84, 84, generator=g)
        qx = torch.randn(2, 3, 84, 84, generator=g)
        loss = episode_loss(model(sx, torch.tensor([0, 0, 1, 1]), qx, 2),
                            torch.tensor([0, 1]))
        loss.backward()
        bias_grad = dict(model.named_parameters())["proxy.weight_net.score.bias"].grad
        assert float(bias_grad.abs().max()) < 1e-6
