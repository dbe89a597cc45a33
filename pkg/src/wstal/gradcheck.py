"""Central finite-difference gradient verification for every differentiable block.

Each named case builds a small randomized instance (T <= 8, D <= 16, C <= 4) in
float64, pairs a scalar-valued closure with the parameters it should reach, and
compares autograd against central differences entry by entry. Forward blocks
are reduced to scalars through a fixed random linear probe so their full
Jacobian is exercised without materializing it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import torch

from .contrast import ContrastConfig, contrastive_loss
from .model import (
    DTYPE,
    AttentionHead,
    CamHead,
    Embedder,
    classification_loss,
    topk_pool,
    weight_cam,
)
from .network import LocalizationNetwork, ModelConfig
from .pseudo import PseudoConfig, segment_probs, uncertainty
from .summarize import FusionBlock, KnowledgeSummarizer, SummarizerConfig, aggregate
from .train import total_loss


@dataclass
class GradCheckReport:
    name: str
    tolerance: float
    atol: float = 1e-6
    errors: dict = field(default_factory=dict)  # param name -> relative error
    diffs: dict = field(default_factory=dict)  # param name -> |analytic - numeric|
    failures: list = field(default_factory=list)

    @property
    def max_error(self) -> float:
        """Largest relative error among parameters with a non-noise difference."""
        meaningful = [
            err for name, err in self.errors.items() if self.diffs.get(name, 0.0) > self.atol
        ]
        return max(meaningful, default=0.0)

    @property
    def passed(self) -> bool:
        return not self.failures


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    scale = max(analytic.norm().item(), numeric.norm().item(), 1e-8)
    return (analytic - numeric).norm().item() / scale


def check_gradients(
    fn: Callable[[], torch.Tensor],
    params: dict[str, torch.Tensor],
    step: float = 1e-6,
    tolerance: float = 1e-4,
    atol: float = 1e-6,
    name: str = "loss",
) -> GradCheckReport:
    """Compare autograd gradients of fn() against central finite differences.

    A parameter fails when its gradients differ by more than `atol` in norm
    and by more than `tolerance` relatively. The absolute floor matters for
    parameters whose true gradient is exactly zero (for instance a key bias
    that softmax attention is invariant to): there both sides sit at
    finite-difference noise level and a pure ratio test would be meaningless.
    """
    for p in params.values():
        p.grad = None
    value = fn()
    value.backward()
    report = GradCheckReport(name=name, tolerance=tolerance, atol=atol)
    for pname, p in params.items():
        analytic = p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
        numeric = torch.zeros_like(p)
        flat, num_flat = p.data.view(-1), numeric.view(-1)
        with torch.no_grad():
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                hi = fn().item()
                flat[i] = orig - step
                lo = fn().item()
                flat[i] = orig
                num_flat[i] = (hi - lo) / (2.0 * step)
        err = relative_error(analytic, numeric)
        diff = (analytic - numeric).norm().item()
        report.errors[pname] = err
        report.diffs[pname] = diff
        if diff > atol and err > tolerance:
            report.failures.append(pname)
    return report


def frozen_pseudo_loss(
    cam: torch.Tensor, pseudo_cam: torch.Tensor, config: PseudoConfig, weight: torch.Tensor
) -> torch.Tensor:
    """Self-training loss with the confidence weight pinned to a constant.

    The production loss detaches exp(-KL) before backward, so its autograd
    gradient treats that factor as fixed. Finite differences would see the
    factor move with the parameters; pinning it to its base-point value makes
    both sides differentiate the same function.
    """
    p = segment_probs(cam, config.eps)
    q = segment_probs(pseudo_cam, config.eps)
    div = (p * (torch.log(p) - torch.log(q))).sum(dim=-1)
    cross = -(q * torch.log(p)).sum(dim=-1)
    return (weight * cross + config.variance_weight * div).mean()


def _named_params(module: torch.nn.Module, prefix: str) -> dict[str, torch.Tensor]:
    return {f"{prefix}.{n}": p for n, p in module.named_parameters()}


def _probe_scalar(out: torch.Tensor, gen: torch.Generator) -> torch.Tensor:
    probe = torch.randn(out.shape, generator=gen, dtype=DTYPE)
    return (out * probe).sum()


def build_case(name: str, seed: int = 0) -> tuple[Callable[[], torch.Tensor], dict]:
    """Return (scalar closure, parameter dict) for one named gradient case."""
    gen = torch.Generator().manual_seed(seed)

    def rand(*shape):
        return torch.randn(*shape, generator=gen, dtype=DTYPE)

    T, d_in, d, C = 6, 10, 8, 3

    if name == "embedder":
        module = Embedder(d_in, d, depth=2)
        x = rand(T, d_in) + 0.5
        probe_gen = torch.Generator().manual_seed(seed + 1)
        probe = torch.randn(T, d, generator=probe_gen, dtype=DTYPE)
        return lambda: (module(x) * probe).sum(), _named_params(module, "embedder")

    if name == "cam_head":
        module = CamHead(d, C)
        x = rand(T, d)
        probe = rand(T, C + 1)
        return lambda: (module(x) * probe).sum(), _named_params(module, "cam_head")

    if name == "attention":
        # Branch softmax weights applied to a CAM. One probe per branch: a
        # shared probe would cancel the attention entirely because the three
        # branch weights sum to one at every segment.
        att = AttentionHead(d)
        cam_head = CamHead(d, C)
        x = rand(T, d)
        probes = {branch: rand(T, C + 1) for branch in ("ins", "con", "back")}

        def fn():
            weights = att(x)
            cam = cam_head(x)
            return sum(
                (weight_cam(cam, weights, branch) * probes[branch]).sum()
                for branch in ("ins", "con", "back")
            )

        return fn, {**_named_params(att, "attention"), **_named_params(cam_head, "cam_head")}

    if name == "classification":
        # Main branch end to end: embeddings, CAM, attention, top-k pooling, CE.
        cfg = ModelConfig(num_classes=C, in_dim=d_in, embed_dim=d, topk_ratio=2)
        net = LocalizationNetwork(cfg)
        x = rand(2, T, d_in)
        labels = torch.tensor([[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]], dtype=DTYPE)

        def fn():
            out = net.main_branch(x)
            terms = []
            for b in range(2):
                for branch in ("ins", "con", "back"):
                    terms.append(classification_loss(out.scores[branch][b], labels[b], branch))
            return torch.stack(terms).mean()

        params = {
            **_named_params(net.embedder, "embedder"),
            **_named_params(net.cam_head, "cam_head"),
            **_named_params(net.att_head, "attention"),
        }
        return fn, params

    if name == "contrast":
        cfg = ContrastConfig(temperature=0.5, density_weight=0.5, robustness=0.2)
        beta = (rand(d) + 0.1).requires_grad_(True)
        positives = torch.nn.functional.normalize(rand(2, d), dim=-1)
        negatives = torch.nn.functional.normalize(rand(3, d), dim=-1)

        def fn():
            query = beta / beta.norm()
            return contrastive_loss(query, positives, negatives, cfg)

        return fn, {"beta": beta}

    if name == "codeword_queries":
        module = KnowledgeSummarizer(d, SummarizerConfig(num_codewords=4, sparse_topk=8))
        probe = rand(4, d)
        return lambda: (module.codeword_queries()[0] * probe).sum(), _named_params(module, "gks")

    if name == "summarize":
        module = KnowledgeSummarizer(d, SummarizerConfig(num_codewords=4, sparse_topk=3))
        rows = rand(7, d)
        probe = rand(4, d)
        return lambda: (module(rows) * probe).sum(), _named_params(module, "gks")

    if name == "aggregate":
        summary = rand(5, d).requires_grad_(True)
        feats = rand(T, d).requires_grad_(True)
        probe = rand(T, d)
        return (
            lambda: (aggregate(feats, summary) * probe).sum(),
            {"summary": summary, "features": feats},
        )

    if name == "fusion":
        module = FusionBlock(d, zero_init=False)
        retrieved = rand(T, d)
        feats = rand(T, d)
        probe = rand(T, d)
        return lambda: (module(retrieved, feats) * probe).sum(), _named_params(module, "fusion")

    if name == "pseudo":
        # Self-training loss on top of the whole summarize/aggregate/fuse stack
        # and the shared head, with the confidence weight pinned at the base
        # point (see frozen_pseudo_loss).
        cfg = ModelConfig(
            num_classes=C, in_dim=d_in, embed_dim=d, num_codewords=4, sparse_topk=3,
            fusion_zero_init=False,
        )
        net = LocalizationNetwork(cfg)
        x = rand(T, d_in)
        rows = rand(6, d)
        pcfg = PseudoConfig(variance_weight=0.001)

        with torch.no_grad():
            feats0 = net.embedder(x)
            cam0 = net.cam_head(feats0)
            out0 = net.pseudo_branch(feats0, net.summarize(rows))
            weight0 = torch.exp(-uncertainty(cam0, out0.cam, pcfg.eps))

        def fn():
            feats = net.embedder(x)
            cam = net.cam_head(feats)
            summary = net.summarize(rows)
            out = net.pseudo_branch(feats, summary)
            return frozen_pseudo_loss(cam, out.cam, pcfg, weight0)

        return fn, _named_params(net, "net")

    if name == "total":
        # Composite objective: classification + contrast + pseudo on one
        # instance, pseudo weight pinned as in the "pseudo" case.
        cfg = ModelConfig(
            num_classes=C, in_dim=d_in, embed_dim=d, topk_ratio=2,
            num_codewords=4, sparse_topk=4, fusion_zero_init=False,
        )
        net = LocalizationNetwork(cfg)
        x = rand(2, T, d_in)
        labels = torch.tensor([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]], dtype=DTYPE)
        rows = rand(5, d)
        positives = torch.nn.functional.normalize(rand(2, d), dim=-1)
        negatives = torch.nn.functional.normalize(rand(4, d), dim=-1)
        ccfg = ContrastConfig(temperature=0.5)
        pcfg = PseudoConfig()

        with torch.no_grad():
            out0 = net.main_branch(x)
            pseudo0 = net.pseudo_branch(out0.embeddings, net.summarize(rows))
            weight0 = torch.exp(-uncertainty(out0.cam, pseudo0.cam, pcfg.eps))

        def fn():
            out = net.main_branch(x)
            parts = {}
            for branch in ("ins", "con", "back"):
                parts[branch] = torch.stack(
                    [
                        classification_loss(out.scores[branch][b], labels[b], branch)
                        for b in range(2)
                    ]
                ).mean()
            beta = out.embeddings[0].mean(dim=0)
            query = beta / beta.norm()
            parts["contrast"] = contrastive_loss(query, positives, negatives, ccfg)
            summary = net.summarize(rows)
            pseudo = net.pseudo_branch(out.embeddings, summary)
            parts["pseudo"] = frozen_pseudo_loss(out.cam, pseudo.cam, pcfg, weight0)
            return total_loss(parts, gamma=1.0, mu=0.1)

        return fn, _named_params(net, "net")

    raise ValueError(f"unknown gradient case {name!r}")


CASE_NAMES = (
    "embedder",
    "cam_head",
    "attention",
    "classification",
    "contrast",
    "codeword_queries",
    "summarize",
    "aggregate",
    "fusion",
    "pseudo",
    "total",
)


def gradient_check(name: str, seed: int = 0, tolerance: float = 1e-4) -> GradCheckReport:
    fn, params = build_case(name, seed=seed)
    return check_gradients(fn, params, tolerance=tolerance, name=name)
