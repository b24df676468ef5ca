"""Copy-task training harness.

A training sequence is ``[s_1 .. s_L, SEP, s_1 .. s_L]``: L random symbols, a
dedicated separator, then the same symbols again.  The model is trained with
causally masked next-token prediction, with the loss restricted to the
positions that predict the separator and the duplicated half (the first half is
unpredictable noise).  Reported accuracy counts only the duplicated symbols.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import ContractViolation
from .model import Transformer, TransformerConfig
from .optim import StepDropSchedule, make_optimizer


@dataclass
class CopyTrainConfig:
    """Flat run configuration; mirrors the key=value config-file format."""

    layers: int = 2
    heads: int = 4
    model_dim: int = 64
    seq_len: int = 32
    vocab: int = 10
    attention: str = "linear-elu1"
    lr: float = 1e-3
    lr_drop_step: int = 3000
    updates: int = 2000
    batch: int = 64
    seed: int = 0
    optimizer: str = "radam"

    @property
    def segment_len(self) -> int:
        return (self.seq_len - 1) // 2

    @property
    def separator_id(self) -> int:
        return self.vocab

    def transformer_config(self) -> TransformerConfig:
        return TransformerConfig(
            layers=self.layers,
            heads=self.heads,
            model_dim=self.model_dim,
            vocab_size=self.vocab + 1,
            max_len=2 * self.segment_len + 1,
            attention=self.attention,
            seed=self.seed,
        )


_CONFIG_TYPES = {f.name: f.type for f in fields(CopyTrainConfig)}


def parse_config(path) -> CopyTrainConfig:
    """Read a flat ``key=value`` config file (one pair per line, # comments)."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractViolation(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_TYPES:
            raise ContractViolation(f"{path}:{lineno}: unknown config key {key!r}")
        kind = _CONFIG_TYPES[key]
        if kind in ("int", int):
            values[key] = int(value)
        elif kind in ("float", float):
            values[key] = float(value)
        else:
            values[key] = value
    return CopyTrainConfig(**values)


def copy_batch(rng: np.random.Generator, batch: int, segment_len: int, symbols: int) -> np.ndarray:
    """Sample a batch of copy sequences, shape (batch, 2*segment_len + 1)."""
    half = rng.integers(0, symbols, size=(batch, segment_len))
    sep = np.full((batch, 1), symbols, dtype=half.dtype)
    return np.concatenate([half, sep, half], axis=1)


def batch_targets(seqs: np.ndarray, segment_len: int):
    """Split sequences into model inputs, shifted targets and the loss mask.

    The mask selects target positions >= segment_len in the full sequence,
    i.e. the separator and the duplicated half.
    """
    inputs = seqs[:, :-1]
    targets = seqs[:, 1:]
    mask = np.zeros_like(targets, dtype=np.float64)
    mask[:, segment_len - 1 :] = 1.0
    return inputs, targets, mask


@dataclass
class TrainingReport:
    steps: list = field(default_factory=list)  # (step, loss, lr) triples
    final_accuracy: float = float("nan")
    final_loss: float = float("nan")
    failed: bool = False

    def losses(self) -> list[float]:
        return [loss for _, loss, _ in self.steps]


def write_report_csv(report: TrainingReport, path) -> None:
    """Report format: header ``step,loss,lr``, one row per update, then a
    trailing summary line ``accuracy,<value>``."""
    lines = ["step,loss,lr"]
    lines += [f"{step},{loss!r},{lr!r}" for step, loss, lr in report.steps]
    lines.append(f"accuracy,{report.final_accuracy!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def copied_segment_accuracy(model: Transformer, cfg: CopyTrainConfig,
                            rng: np.random.Generator, sequences: int = 256) -> float:
    """Greedy token accuracy on the duplicated half of held-out sequences."""
    seg = cfg.segment_len
    total = correct = 0
    for start in range(0, sequences, cfg.batch):
        seqs = copy_batch(rng, min(cfg.batch, sequences - start), seg, cfg.vocab)
        inputs, targets, _ = batch_targets(seqs, seg)
        logits = model.forward(inputs, causal=True)
        pred = np.argmax(logits.data, axis=-1)
        # positions predicting the duplicated symbols (after the separator)
        correct += int((pred[:, seg:] == targets[:, seg:]).sum())
        total += targets[:, seg:].size
    return correct / total


def train_copy_task(cfg: CopyTrainConfig, eval_sequences: int = 256,
                    progress=None, model: Transformer | None = None
                    ) -> tuple[TrainingReport, Transformer]:
    """Train a transformer on the copy task; returns the report and the model.

    A non-finite loss marks the report failed and stops the run instead of
    raising.  Pass ``model`` to continue training an existing instance.
    """
    if model is None:
        model = Transformer(cfg.transformer_config())
    schedule = StepDropSchedule(lr=cfg.lr, drop_step=cfg.lr_drop_step, lr_after=cfg.lr / 10.0)
    optimizer = make_optimizer(cfg.optimizer, model.parameters(), schedule)
    data_rng = np.random.default_rng(cfg.seed + 1_000)
    report = TrainingReport()
    seg = cfg.segment_len

    for step in range(1, cfg.updates + 1):
        seqs = copy_batch(data_rng, cfg.batch, seg, cfg.vocab)
        inputs, targets, mask = batch_targets(seqs, seg)
        logits = model.forward(inputs, causal=True)
        loss = ad.cross_entropy_masked(logits, targets, mask)
        loss_val = float(loss.data)
        report.steps.append((step, loss_val, schedule(step)))
        if math.isnan(loss_val) or math.isinf(loss_val):
            report.failed = True
            break
        optimizer.zero_grad()
        ad.backward(loss)
        optimizer.step()
        if progress is not None and (step % 100 == 0 or step == cfg.updates):
            progress(step, loss_val)

    if not report.failed:
        if eval_sequences > 0:
            eval_rng = np.random.default_rng(cfg.seed + 2_000)
            report.final_accuracy = copied_segment_accuracy(model, cfg, eval_rng, eval_sequences)
        report.final_loss = report.steps[-1][1] if report.steps else float("nan")
    return report, model
