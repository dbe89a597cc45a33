import pytest
import torch

from wstal.gradcheck import (
    CASE_NAMES,
    build_case,
    check_gradients,
    frozen_pseudo_loss,
    gradient_check,
    relative_error,
)
from wstal.model import DTYPE
from wstal.pseudo import PseudoConfig, pseudo_loss, uncertainty


class TestRelativeError:
    def test_identical_zero(self):
        a = torch.tensor([1.0, 2.0], dtype=DTYPE)
        assert relative_error(a, a.clone()) == 0.0

    def test_known_value(self):
        a = torch.tensor([1.0, 0.0], dtype=DTYPE)
        b = torch.tensor([0.0, 0.0], dtype=DTYPE)
        assert abs(relative_error(a, b) - 1.0) < 1e-12


class TestChecker:
    def test_analytic_quadratic_passes(self):
        # f(w) = sum(w^2) has exact gradient 2w, central differences are exact
        # for quadratics up to roundoff
        w = torch.tensor([0.3, -1.2, 2.0], dtype=DTYPE, requires_grad=True)
        report = check_gradients(lambda: (w * w).sum(), {"w": w}, name="quad")
        assert report.passed
        assert report.max_error < 1e-9

    def test_detects_wrong_gradient(self):
        class Doubler(torch.autograd.Function):
            @staticmethod
            def forward(ctx, x):
                return (x * x).sum()

            @staticmethod
            def backward(ctx, grad):
                # deliberately wrong: claims gradient is constant 1
                return grad * torch.ones(3, dtype=DTYPE)

        w = torch.tensor([0.5, 1.5, -0.7], dtype=DTYPE, requires_grad=True)
        report = check_gradients(lambda: Doubler.apply(w), {"w": w}, name="bad")
        assert not report.passed
        assert report.failures == ["w"]
        assert report.name == "bad"

    def test_report_carries_tolerance(self):
        w = torch.tensor([1.0], dtype=DTYPE, requires_grad=True)
        report = check_gradients(lambda: w.sum(), {"w": w}, tolerance=5e-5, name="lin")
        assert report.tolerance == 5e-5

    def test_zero_gradient_parameter_passes_on_absolute_floor(self):
        # u never influences the output; both gradients are noise, and the
        # absolute floor must keep the ratio test from firing
        w = torch.tensor([0.5, -0.5], dtype=DTYPE, requires_grad=True)
        u = torch.tensor([3.0], dtype=DTYPE, requires_grad=True)
        report = check_gradients(lambda: (w * w).sum() + 0.0 * u.sum(), {"w": w, "u": u})
        assert report.passed


class TestFrozenPseudoLoss:
    def test_matches_production_value_and_gradient(self):
        torch.manual_seed(0)
        cfg = PseudoConfig()
        cam = torch.randn(5, 4, dtype=DTYPE, requires_grad=True)
        pcam = torch.randn(5, 4, dtype=DTYPE, requires_grad=True)
        with torch.no_grad():
            weight0 = torch.exp(-uncertainty(cam, pcam, cfg.eps))

        live = pseudo_loss(cam, pcam, cfg)
        live.backward()
        grads_live = (cam.grad.clone(), pcam.grad.clone())
        cam.grad = pcam.grad = None

        frozen = frozen_pseudo_loss(cam, pcam, cfg, weight0)
        frozen.backward()
        assert torch.equal(live.detach(), frozen.detach())
        assert torch.equal(grads_live[0], cam.grad)
        assert torch.equal(grads_live[1], pcam.grad)


class TestCases:
    def test_all_case_names_buildable(self):
        for name in CASE_NAMES:
            fn, params = build_case(name, seed=0)
            assert params, name
            value = fn()
            assert value.dim() == 0
            assert torch.isfinite(value)

    @pytest.mark.parametrize("name", ["embedder", "classification", "contrast"])
    def test_spot_cases_pass(self, name):
        report = gradient_check(name, seed=0)
        assert report.passed, report.failures

    def test_unknown_case_rejected(self):
        with pytest.raises(ValueError, match="unknown"):
            build_case("nope")
