"""Training loop: total objective, warm-up gating, schedule, checkpoints.

Determinism contract: a fixed seed fixes model initialization, batch order,
and therefore the whole loss trace. All state that influences future steps
(parameters, optimizer moments, bank, batch-shuffle RNG) round-trips through
checkpoints bit-exactly, so save/load followed by one step matches one step
without the round-trip.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import torch

from . import io as wio
from .contrast import build_pairs, contrastive_loss
from .data import Dataset, sample_segments
from .memory import MemoryBank, compute_mask, representative_feature
from .model import DTYPE, classification_loss
from .network import LocalizationNetwork, ModelConfig
from .pseudo import pseudo_loss

if TYPE_CHECKING:
    from .config import RunConfig

STATE_FILE = "state.pt"
BANK_FILE = "bank.wstf"
BANK_META_FILE = "bank_meta.json"
METRICS_FILE = "metrics.jsonl"
CONFIG_FILE = "config.yaml"

LOSS_KEYS = ("ins", "con", "back", "contrast", "pseudo")


class TrainingError(RuntimeError):
    """Raised when optimization cannot continue (e.g. a loss went non-finite)."""


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    learning_rate: float = 1e-4
    lr_decay: float = 0.1
    lr_step: int = 100
    warmup_epochs: int = 50
    gamma: float = 1.0  # pseudo-label loss weight
    mu: float = 0.1  # contrastive loss weight
    enable_rmgcl: bool = True
    enable_gks: bool = True
    enable_gka: bool = True
    enable_pseudo: bool = True
    seed: int = 0
    eval_every: int = 0  # 0: never evaluate mid-training

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError("need 0 <= warmup_epochs < epochs")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.lr_step < 1 or not 0 < self.lr_decay <= 1:
            raise ValueError("invalid learning-rate schedule")


def total_loss(parts: dict, gamma: float, mu: float) -> torch.Tensor:
    """Full objective: branch classification sum + gamma * pseudo + mu * contrast."""
    cls = parts["ins"] + parts["con"] + parts["back"]
    return cls + gamma * parts["pseudo"] + mu * parts["contrast"]


class Trainer:
    """Owns all mutable training state for one run."""

    def __init__(self, config: "RunConfig", train_data: Dataset, eval_data: Dataset | None = None):
        self.config = config
        self.train_cfg = config.train
        torch.set_num_threads(1)
        torch.manual_seed(self.train_cfg.seed)

        if not train_data.videos:
            raise TrainingError("training dataset is empty")
        in_dim = train_data.videos[0].features.shape[1]
        self.model_config = dataclasses.replace(
            config.model, num_classes=train_data.num_classes, in_dim=in_dim
        )
        self.model = LocalizationNetwork(self.model_config)
        self.dataset = train_data
        self.eval_data = eval_data
        self.num_segments = config.data.num_segments

        self.features = []
        self.labels = []
        for video in train_data.videos:
            resampled = sample_segments(video.features, self.num_segments)
            self.features.append(torch.as_tensor(resampled, dtype=DTYPE))
            self.labels.append(torch.as_tensor(np.asarray(video.labels), dtype=DTYPE))
        self.features = torch.stack(self.features)  # (N, T, D_in)
        self.labels = torch.stack(self.labels)  # (N, C)

        self.optimizer = torch.optim.Adam(
            self.model.parameters(), lr=self.train_cfg.learning_rate
        )
        self.bank = MemoryBank(
            train_data.num_classes, self.model_config.embed_dim, config.memory
        )
        self.summary: torch.Tensor | None = None
        self.epoch = 0
        self.metrics: list[dict] = []
        self._shuffle = np.random.default_rng(self.train_cfg.seed)

    # -- gating ---------------------------------------------------------------

    @property
    def needs_bank(self) -> bool:
        return self.train_cfg.enable_rmgcl or self.train_cfg.enable_gka

    @property
    def bank_active(self) -> bool:
        return self.needs_bank and self.epoch >= self.train_cfg.warmup_epochs

    # -- stepping -------------------------------------------------------------

    def _learning_rate(self) -> float:
        cfg = self.train_cfg
        return cfg.learning_rate * cfg.lr_decay ** (self.epoch // cfg.lr_step)

    def _batches(self):
        order = self._shuffle.permutation(len(self.features))
        step = self.train_cfg.batch_size
        for lo in range(0, len(order), step):
            yield order[lo : lo + step]

    def train_step(self, indices: np.ndarray) -> dict:
        cfg = self.train_cfg
        feats = self.features[indices]
        labels = self.labels[indices]
        main = self.model.main_branch(feats)

        zero = feats.new_zeros(())
        parts = {key: zero for key in LOSS_KEYS}
        for branch in ("ins", "con", "back"):
            losses = [
                classification_loss(main.scores[branch][b], labels[b], branch)
                for b in range(len(indices))
            ]
            parts[branch] = torch.stack(losses).mean()

        if self.bank_active:
            snapshot = self.bank.snapshot()
            pending = []
            contrast_terms = []
            background = self.bank.background_id
            for b in range(len(indices)):
                classes = [c for c in range(self.dataset.num_classes) if labels[b, c] > 0]
                classes.append(background)
                class_terms = []
                for c in classes:
                    branch = "ins" if c != background else "back"
                    cam = main.weighted[branch][b].detach()
                    mask = compute_mask(cam, c, self.config.memory.mask_threshold)
                    beta = representative_feature(main.embeddings[b], mask)
                    if beta is None:
                        self.bank.stats["degenerate_masks"] += 1
                        continue
                    if cfg.enable_rmgcl:
                        positives, negatives = build_pairs(snapshot, c)
                        if len(positives):
                            query = beta / beta.norm().clamp(min=1e-12)
                            class_terms.append(
                                contrastive_loss(query, positives, negatives, self.config.contrast)
                            )
                    pending.append((c, beta.detach(), labels[b]))
                if class_terms:
                    contrast_terms.append(torch.stack(class_terms).mean())
            if contrast_terms:
                parts["contrast"] = torch.stack(contrast_terms).mean()

            if cfg.enable_gka:
                rows, _ = snapshot.all_filled_rows()
                if len(rows):
                    summary = self.model.summarize(rows) if cfg.enable_gks else rows
                    self.summary = summary.detach().clone()
                    if cfg.enable_pseudo:
                        pseudo = self.model.pseudo_branch(main.embeddings, summary)
                        parts["pseudo"] = pseudo_loss(main.cam, pseudo.cam, self.config.pseudo)

            for class_id, beta, video_labels in pending:
                self.bank.update(class_id, beta, video_labels)

        for name, value in parts.items():
            if not torch.isfinite(value.detach()):
                raise TrainingError(
                    f"non-finite {name} loss at epoch {self.epoch} "
                    f"(value {float(value.detach())})"
                )

        loss = total_loss(parts, cfg.gamma, cfg.mu)
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()

        out = {key: float(parts[key].detach()) for key in LOSS_KEYS}
        out["total"] = float(loss.detach())
        return out

    def train_epoch(self) -> dict:
        lr = self._learning_rate()
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        sums: dict[str, float] = {}
        count = 0
        for indices in self._batches():
            step = self.train_step(indices)
            for key, value in step.items():
                sums[key] = sums.get(key, 0.0) + value
            count += 1
        record = {"epoch": self.epoch, "lr": lr}
        for key in (*LOSS_KEYS, "total"):
            record[f"loss_{key}" if key != "total" else "loss"] = sums[key] / count
        record["loss_cls"] = record["loss_ins"] + record["loss_con"] + record["loss_back"]
        record["map"] = None
        self.epoch += 1
        if (
            self.eval_data is not None
            and self.train_cfg.eval_every > 0
            and self.epoch % self.train_cfg.eval_every == 0
        ):
            record["map"] = self.evaluate()
        self.metrics.append(record)
        return record

    def fit(self, out_dir: str | Path | None = None) -> list[dict]:
        for _ in range(self.train_cfg.epochs - self.epoch):
            self.train_epoch()
        if out_dir is not None:
            self.save(out_dir)
        return self.metrics

    # -- evaluation hooks -----------------------------------------------------

    def current_summary(self) -> torch.Tensor | None:
        """Fresh summary matrix from the current bank and parameters."""
        if not self.train_cfg.enable_gka:
            return None
        rows, _ = self.bank.snapshot().all_filled_rows()
        if not len(rows):
            return None
        if not self.train_cfg.enable_gks:
            return rows.clone()
        with torch.no_grad():
            return self.model.summarize(rows).clone()

    def evaluate(self) -> float:
        from .proposals import run_inference
        from .evaluate import mean_ap

        if self.eval_data is None:
            raise TrainingError("no evaluation dataset attached")
        detections = run_inference(
            self.model,
            self.eval_data,
            self.num_segments,
            self.config.inference,
            summary=self.current_summary(),
        )
        result = mean_ap(
            detections, self.eval_data.ground_truth, self.eval_data.num_classes, self.config.eval
        )
        return result.average

    # -- persistence ----------------------------------------------------------

    def save(self, out_dir: str | Path) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        summary = self.current_summary()
        state = {
            "model": self.model.state_dict(),
            "optimizer": self.optimizer.state_dict(),
            "bank": self.bank.state_dict(),
            "summary": summary,
            "epoch": self.epoch,
            "metrics": self.metrics,
            "shuffle_rng": self._shuffle.bit_generator.state,
            "torch_rng": torch.get_rng_state(),
            "model_config": dataclasses.asdict(self.model_config),
            "class_names": list(self.dataset.class_names),
            "num_segments": self.num_segments,
        }
        torch.save(state, out / STATE_FILE)

        # Interoperable bank export: rows in the feature-file format, bookkeeping
        # in a JSON sidecar. The authoritative copy for resuming lives in state.pt.
        rows = self.bank.rows.reshape(-1, self.bank.rows.shape[-1]).numpy()
        wio.write_features(out / BANK_FILE, rows.astype(np.float32))
        meta = {
            "shape": list(self.bank.rows.shape),
            "cursor": self.bank.cursor.tolist(),
            "fill": self.bank.fill.tolist(),
        }
        (out / BANK_META_FILE).write_text(json.dumps(meta, indent=2) + "\n")

        with open(out / METRICS_FILE, "w") as fh:
            for record in self.metrics:
                fh.write(json.dumps(record) + "\n")
        self.config.to_file(out / CONFIG_FILE)
        return out

    def restore(self, out_dir: str | Path) -> None:
        """Load state saved by `save` into this trainer (same config and data)."""
        state = torch.load(Path(out_dir) / STATE_FILE, weights_only=False)
        if state["model_config"] != dataclasses.asdict(self.model_config):
            raise TrainingError("checkpoint was produced with a different model configuration")
        self.model.load_state_dict(state["model"])
        self.optimizer.load_state_dict(state["optimizer"])
        self.bank.load_state_dict(state["bank"])
        self.summary = state["summary"]
        self.epoch = state["epoch"]
        self.metrics = list(state["metrics"])
        self._shuffle.bit_generator.state = state["shuffle_rng"]
        torch.set_rng_state(state["torch_rng"])


@dataclass
class CheckpointBundle:
    """What inference needs from a finished run."""

    model: LocalizationNetwork
    summary: torch.Tensor | None
    class_names: list[str]
    num_segments: int
    epoch: int


def load_checkpoint(out_dir: str | Path) -> CheckpointBundle:
    path = Path(out_dir) / STATE_FILE
    if not path.exists():
        raise FileNotFoundError(f"no checkpoint state at {path}")
    state = torch.load(path, weights_only=False)
    model = LocalizationNetwork(ModelConfig(**state["model_config"]))
    model.load_state_dict(state["model"])
    model.eval()
    return CheckpointBundle(
        model=model,
        summary=state["summary"],
        class_names=list(state["class_names"]),
        num_segments=int(state["num_segments"]),
        epoch=int(state["epoch"]),
    )
