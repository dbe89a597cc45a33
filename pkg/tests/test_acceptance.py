"""Acceptance gate: one test per shipping criterion, one PASS/FAIL line each.

Run with `pytest tests/test_acceptance.py -s` to see the verdict lines inline.
The end-to-end criteria train real models and take a couple of minutes.
"""

import contextlib
import dataclasses
import math
import time

import numpy as np
import pytest
import torch

from wstal.config import RunConfig
from wstal.contrast import ContrastConfig, contrastive_loss
from wstal.evaluate import EvalConfig, average_precision, mean_ap, tiou
from wstal.gradcheck import CASE_NAMES, gradient_check
from wstal.memory import MemoryBank, MemoryConfig
from wstal.model import DTYPE
from wstal.network import LocalizationNetwork, ModelConfig
from wstal.proposals import Proposal, nms
from wstal.pseudo import PseudoConfig, pseudo_loss, segment_probs, uncertainty
from wstal.summarize import aggregate
from wstal.synthetic import SyntheticSpec, generate_dataset, split_dataset
from wstal.train import TrainConfig, Trainer


@contextlib.contextmanager
def verdict(num: int, label: str):
    try:
        yield
    except BaseException:
        print(f"\n[criterion {num}] FAIL  {label}")
        raise
    print(f"\n[criterion {num}] PASS  {label}")


def unit_rows(sims, dim=6):
    """Unit vectors whose dot product with e1 equals each requested value."""
    rows = []
    for s in sims:
        row = torch.zeros(dim, dtype=DTYPE)
        row[0] = s
        row[1] = math.sqrt(max(0.0, 1.0 - s * s))
        rows.append(row)
    return torch.stack(rows) if rows else torch.zeros(0, dim, dtype=DTYPE)


def loss_for_sims(s_pos, s_neg, cfg):
    query = torch.zeros(6, dtype=DTYPE)
    query[0] = 1.0
    return contrastive_loss(query, unit_rows(s_pos), unit_rows(s_neg), cfg)


def logits_for(probs):
    return torch.log(torch.as_tensor(probs, dtype=DTYPE))


# -- criterion 1: analytic gradients everywhere -------------------------------


def test_criterion_1_gradient_suite():
    with verdict(1, "finite differences confirm every block's gradients"):
        t0 = time.monotonic()
        reports = [gradient_check(name, seed=0, tolerance=1e-4) for name in CASE_NAMES]
        elapsed = time.monotonic() - t0
        for report in reports:
            assert report.passed, f"{report.name}: {report.failures}"
        assert elapsed < 120.0, f"gradient sweep took {elapsed:.1f}s"
        worst = max(r.max_error for r in reports)
        print(
            f"\n  {len(reports)} cases in {elapsed:.1f}s, "
            f"worst meaningful rel err {worst:.2e}"
        )


# -- criterion 2: contrastive loss fixed points -------------------------------


def test_criterion_2_contrast_fixed_points():
    with verdict(2, "contrastive loss hits its closed-form fixed points"):
        rng = np.random.default_rng(0)
        for _ in range(20):
            s = float(rng.uniform(-1.0, 1.0))
            cfg = ContrastConfig(temperature=1.0, density_weight=1.0, robustness=1.0)
            loss = loss_for_sims([s], [], cfg)
            assert abs(loss.item()) <= 1e-9, f"symmetric case at s={s}: {loss.item()}"

        cfg = ContrastConfig(temperature=1.0, density_weight=0.5, robustness=1.0)
        zero = loss_for_sims([0.0], [0.0], cfg)
        assert abs(zero.item()) <= 1e-6

        cfg = ContrastConfig(temperature=1.0, density_weight=0.5, robustness=0.5)
        value = loss_for_sims([0.0], [], cfg)
        expect = -2.0 + 2.0 * math.sqrt(0.5)
        assert abs(value.item() - expect) <= 1e-6


# -- criterion 3: uncertainty weighting ---------------------------------------


def test_criterion_3_uncertainty_and_pseudo_loss():
    with verdict(3, "divergence weighting matches hand-computed values"):
        torch.manual_seed(0)
        cam = torch.randn(6, 4, dtype=DTYPE)
        assert torch.all(uncertainty(cam, cam.clone()).abs() <= 1e-12)
        bumped = cam.clone()
        bumped[:, 0] += 0.3  # shift one class only; a uniform shift cancels in softmax
        assert torch.all(uncertainty(cam, bumped) > 0)

        div = uncertainty(logits_for([[0.5, 0.5]]), logits_for([[0.25, 0.75]]))
        assert abs(div[0].item() - 0.1438) <= 1e-4

        for _ in range(100):
            a = torch.randn(4, 3, dtype=DTYPE) * 3
            b = torch.randn(4, 3, dtype=DTYPE) * 3
            weight = torch.exp(-uncertainty(a, b))
            assert torch.all(weight > 0) and torch.all(weight <= 1.0)

        loss = pseudo_loss(
            logits_for([[0.5, 0.5]]),
            logits_for([[0.25, 0.75]]),
            PseudoConfig(variance_weight=0.001),
        )
        assert abs(loss.item() - 0.6004) <= 1e-3


# -- criterion 4: posterior normalization and aggregation geometry ------------


def test_criterion_4_normalization_and_hull():
    with verdict(4, "posteriors normalize; aggregation stays inside the hull"):
        torch.manual_seed(1)
        for _ in range(1000):
            t = int(torch.randint(1, 12, (1,)))
            c = int(torch.randint(2, 9, (1,)))
            probs = segment_probs(torch.randn(t, c, dtype=DTYPE) * 5)
            assert torch.all((probs.sum(dim=-1) - 1.0).abs() <= 1e-6)

        for _ in range(50):
            feats = torch.randn(7, 5, dtype=DTYPE) * 2
            summary = torch.randn(4, 5, dtype=DTYPE) * 2
            out = aggregate(feats, summary)
            lo = summary.min(dim=0).values - 1e-9
            hi = summary.max(dim=0).values + 1e-9
            assert torch.all(out >= lo) and torch.all(out <= hi)
            row_norms = summary.abs().max(dim=-1).values
            assert torch.all(out.abs().max(dim=-1).values <= row_norms.max() + 1e-9)


# -- criterion 5: memory bank update semantics --------------------------------


def test_criterion_5_memory_semantics():
    with verdict(5, "memory momentum, label filtering, and warm-up gating"):
        labels = torch.tensor([1.0, 0.0], dtype=DTYPE)

        def bank_with(momentum):
            bank = MemoryBank(2, 3, MemoryConfig(queue_len=1, momentum=momentum))
            bank.update(0, torch.tensor([1.0, 2.0, 3.0], dtype=DTYPE), labels)
            return bank

        first = torch.tensor([1.0, 2.0, 3.0], dtype=DTYPE)
        second = torch.tensor([5.0, 5.0, 5.0], dtype=DTYPE)

        bank = bank_with(0.0)
        bank.update(0, second, labels)
        assert torch.equal(bank.rows[0, 0], first)  # alpha=0 never moves a slot

        bank = bank_with(1.0)
        bank.update(0, second, labels)
        assert torch.equal(bank.rows[0, 0], second)  # alpha=1 replaces outright

        bank = bank_with(0.99)
        bank.update(0, second, labels)
        expect = 0.01 * first + 0.99 * second
        assert torch.allclose(bank.rows[0, 0], expect, atol=1e-12)

        bank = MemoryBank(2, 3, MemoryConfig(queue_len=4))
        rejected = 0
        for _ in range(25):
            ok = bank.update(1, torch.randn(3, dtype=DTYPE), labels)  # label absent
            rejected += int(not ok)
        assert rejected == 25
        assert bank.stats["rejected_label"] == 25
        assert bank.stats["writes"] == 0

        spec = SyntheticSpec(
            num_classes=3, num_videos=8, num_segments=20, feature_dim=8,
            action_length=(4, 8), prototype_separation=1.0, seed=5,
        )
        dataset, _ = generate_dataset(spec)
        cfg = RunConfig()
        cfg = dataclasses.replace(
            cfg,
            data=dataclasses.replace(cfg.data, num_segments=20),
            model=ModelConfig(embed_dim=8, num_codewords=4, sparse_topk=8),
            train=TrainConfig(epochs=2, batch_size=4, warmup_epochs=1, seed=0),
            memory=MemoryConfig(queue_len=4, warmup_epochs=1),
        )
        trainer = Trainer(cfg, dataset)
        trainer.train_epoch()
        assert trainer.bank.stats["writes"] == 0  # warm-up epoch: no writes at all
        trainer.train_epoch()
        assert trainer.bank.stats["writes"] > 0


# -- criterion 6: localization metrics against brute force --------------------


def brute_force_nms(proposals, threshold):
    def overlap(a, b):
        inter = min(a.end, b.end) - max(a.start, b.start)
        if inter <= 0:
            return 0.0
        return inter / ((a.end - a.start) + (b.end - b.start) - inter)

    kept = []
    for class_id in {p.class_id for p in proposals}:
        pool = sorted(
            [p for p in proposals if p.class_id == class_id],
            key=lambda p: (-p.confidence, p.start),
        )
        chosen = []
        while pool:
            best = pool.pop(0)
            chosen.append(best)
            pool = [p for p in pool if overlap(best, p) <= threshold]
        kept.extend(chosen)
    kept.sort(key=lambda p: (-p.confidence, p.start, p.class_id))
    return kept


def reference_ap(dets, gts, threshold):
    order = sorted(range(len(dets)), key=lambda i: (-dets[i][3], dets[i][1], dets[i][0]))
    taken = set()
    flags = []
    for i in order:
        vid, start, end, _ = dets[i]
        best_j, best_o = -1, 0.0
        for j, (gvid, gstart, gend) in enumerate(gts):
            if j in taken or gvid != vid:
                continue
            inter = min(end, gend) - max(start, gstart)
            o = 0.0 if inter <= 0 else inter / ((end - start) + (gend - gstart) - inter)
            if o > best_o:
                best_j, best_o = j, o
        if best_j >= 0 and best_o >= threshold:
            taken.add(best_j)
            flags.append(True)
        else:
            flags.append(False)
    score, tp = 0.0, 0
    for rank, flag in enumerate(flags, start=1):
        if flag:
            tp += 1
            score += tp / rank
    return score / len(gts) if gts else 0.0


def test_criterion_6_metric_oracles():
    with verdict(6, "tIoU, suppression, and mAP agree with brute force"):
        assert tiou((0.0, 2.0), (1.0, 3.0)) == 1.0 / 3.0
        assert tiou((0.0, 1.0), (2.0, 3.0)) == 0.0
        assert tiou((2.0, 5.0), (2.0, 5.0)) == 1.0

        rng = np.random.default_rng(6)
        for _ in range(1000):
            n = int(rng.integers(1, 12))
            props = [
                Proposal(
                    class_id=int(rng.integers(3)),
                    confidence=float(rng.standard_normal()),
                    start=(s := float(rng.uniform(0, 20))),
                    end=s + float(rng.uniform(0.1, 8.0)),
                )
                for _ in range(n)
            ]
            threshold = float(rng.uniform(0.05, 0.95))
            got = nms(props, threshold)
            want = brute_force_nms(props, threshold)
            assert [(p.class_id, p.confidence, p.start, p.end) for p in got] == [
                (p.class_id, p.confidence, p.start, p.end) for p in want
            ]

        from wstal.data import GroundTruthSegment

        grid = (0.1, 0.3, 0.5, 0.7)
        for _ in range(100):
            num_classes = int(rng.integers(1, 4))
            videos = [f"v{i}" for i in range(int(rng.integers(1, 4)))]
            gts = []
            for _ in range(int(rng.integers(1, 7))):
                s = float(rng.uniform(0, 20))
                gts.append(
                    GroundTruthSegment(
                        video_id=videos[int(rng.integers(len(videos)))],
                        class_id=int(rng.integers(num_classes)),
                        start=s,
                        end=s + float(rng.uniform(0.5, 5)),
                    )
                )
            props = {vid: [] for vid in videos}
            for _ in range(int(rng.integers(0, 12))):
                s = float(rng.uniform(0, 20))
                props[videos[int(rng.integers(len(videos)))]].append(
                    Proposal(
                        class_id=int(rng.integers(num_classes)),
                        confidence=float(rng.standard_normal()),
                        start=s,
                        end=s + float(rng.uniform(0.5, 5)),
                    )
                )
            result = mean_ap(props, gts, num_classes, EvalConfig(tiou_grid=grid))
            class_ids = sorted({g.class_id for g in gts})
            for t_idx, threshold in enumerate(grid):
                total = 0.0
                for c in class_ids:
                    cgts = [(g.video_id, g.start, g.end) for g in gts if g.class_id == c]
                    cdets = [
                        (vid, p.start, p.end, p.confidence)
                        for vid, plist in props.items()
                        for p in plist
                        if p.class_id == c
                    ]
                    total += reference_ap(cdets, cgts, threshold)
                assert result.map_per_threshold[t_idx] == total / len(class_ids)

        dets = [("v", 5.0, 6.0, 0.9), ("v", 0.0, 1.0, 0.8)]
        assert average_precision(dets, [("v", 0.0, 1.0)], 0.5) == 0.5


# -- criterion 7: one head serves both branches -------------------------------


def test_criterion_7_shared_head():
    with verdict(7, "identical fused features give a bit-identical pseudo CAM"):
        torch.manual_seed(3)
        net = LocalizationNetwork(
            ModelConfig(
                num_classes=3, in_dim=8, embed_dim=6, num_codewords=4,
                use_layer_norm=False, fusion_zero_init=True,
            )
        )
        x = torch.randn(9, 8, dtype=DTYPE)
        summary = torch.randn(4, 6, dtype=DTYPE)
        with torch.no_grad():
            out = net.main_branch(x)
            pseudo = net.pseudo_branch(out.embeddings, summary)
            # zero-initialized fusion with norms off passes features through
            assert torch.equal(pseudo.fused, out.embeddings)
            assert torch.equal(pseudo.cam, out.cam)

            net.cam_head.proj.bias += 0.5
            out2 = net.main_branch(x)
            pseudo2 = net.pseudo_branch(out2.embeddings, summary)
            assert torch.equal(pseudo2.cam, out2.cam)
            assert not torch.equal(out2.cam, out.cam)
            assert torch.equal(out2.cam - out.cam, pseudo2.cam - pseudo.cam)


# -- criteria 8 and 9: the synthetic end-to-end run ---------------------------

E2E_SPEC = SyntheticSpec(
    num_classes=8,
    num_videos=250,
    num_segments=75,
    feature_dim=64,
    actions_per_video=(1, 3),
    action_length=(5, 15),
    prototype_separation=1.2,
    noise_scale=0.25,
    seed=13,
)


def e2e_config(**train_overrides):
    train = dict(epochs=120, batch_size=16, learning_rate=3e-3, warmup_epochs=30, seed=0)
    train.update(train_overrides)
    cfg = RunConfig()
    return dataclasses.replace(
        cfg,
        data=dataclasses.replace(cfg.data, num_segments=75),
        model=ModelConfig(embed_dim=32, num_codewords=40, sparse_topk=64),
        train=TrainConfig(**train),
        memory=MemoryConfig(queue_len=40, warmup_epochs=30),
    )


@pytest.fixture(scope="module")
def e2e():
    dataset, _ = generate_dataset(E2E_SPEC)
    train_data, test_data = split_dataset(dataset, 200)

    t0 = time.monotonic()
    untrained = Trainer(e2e_config(), train_data, test_data).evaluate()

    first = Trainer(e2e_config(), train_data, test_data)
    first.fit()
    full_score = first.evaluate()

    baseline_cfg = e2e_config(
        enable_rmgcl=False, enable_gks=False, enable_gka=False, enable_pseudo=False
    )
    baseline = Trainer(baseline_cfg, train_data, test_data)
    baseline.fit()
    baseline_score = baseline.evaluate()
    elapsed = time.monotonic() - t0

    second = Trainer(e2e_config(), train_data, test_data)
    second.fit()

    return {
        "untrained": untrained,
        "full": full_score,
        "baseline": baseline_score,
        "elapsed": elapsed,
        "metrics_first": first.metrics,
        "metrics_second": second.metrics,
    }


def test_criterion_8_end_to_end_learning(e2e):
    with verdict(8, "training beats both the untrained and the stripped model"):
        print(
            f"\n  avg mAP: full {e2e['full']:.4f}, baseline {e2e['baseline']:.4f}, "
            f"untrained {e2e['untrained']:.4f}  ({e2e['elapsed']:.0f}s)"
        )
        assert e2e["elapsed"] < 900.0, f"scenario took {e2e['elapsed']:.0f}s"
        assert e2e["full"] > 0.0
        assert e2e["full"] >= 5.0 * e2e["untrained"], (
            f"full {e2e['full']:.4f} vs untrained {e2e['untrained']:.4f}"
        )
        assert e2e["full"] > e2e["baseline"], (
            f"full {e2e['full']:.4f} vs baseline {e2e['baseline']:.4f}"
        )


def test_criterion_9_bitwise_repeatability(e2e):
    with verdict(9, "re-running the same seed reproduces the metric log exactly"):
        assert len(e2e["metrics_first"]) == len(e2e["metrics_second"]) == 120
        assert e2e["metrics_first"] == e2e["metrics_second"]
