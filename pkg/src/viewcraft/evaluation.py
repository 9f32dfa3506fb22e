"""Evaluation on frozen features: linear probes, corruption robustness,
semi-supervised comparison, and top-k reporting.

The linear protocol trains a single linear layer (softmax cross-entropy, or
per-attribute sigmoid with macro-F1 for multi-label tasks) on pre-pooling
features of viewed training inputs; validation applies no views and the
report carries the final epoch's validation score. Frozen components are
bit-identical before and after every evaluation.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .encoder import Encoder, build_encoder
from .errors import (
    CheckpointMismatch,
    ConfigInvalid,
    KTooLarge,
    UnknownSubject,
)


@dataclass(frozen=True)
class LinearEvalConfig:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 128
    epochs: int = 100
    lr_drop_epochs: tuple[int, ...] = (60, 80)
    lr_drop_factor: float = 0.1
    task_type: str = "classification"  # or "multilabel"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigInvalid(f"epochs must be >= 1, got {self.epochs}")
        if any(not 1 <= e <= self.epochs for e in self.lr_drop_epochs):
            raise ConfigInvalid(
                f"lr_drop_epochs {self.lr_drop_epochs} must lie within [1, {self.epochs}]"
            )
        if self.task_type not in ("classification", "multilabel"):
            raise ConfigInvalid(f"unknown task_type {self.task_type!r}")


@dataclass
class EvalReport:
    """Structured evaluation results with stable field names for diffing."""

    scores: dict = field(default_factory=dict)
    topk: dict = field(default_factory=dict)
    corruptions: dict = field(default_factory=dict)
    clean_accuracy: float | None = None
    corrupted_accuracy: float | None = None
    difference: float | None = None

    def to_text(self) -> str:
        out = io.StringIO()
        out.write("viewcraft-eval-report@1\n")
        for name, value in (
            ("clean_accuracy", self.clean_accuracy),
            ("corrupted_accuracy", self.corrupted_accuracy),
            ("difference", self.difference),
        ):
            if value is not None:
                out.write(f"{name}: {value:.4f}\n")
        for section, table in (
            ("scores", self.scores),
            ("topk", self.topk),
            ("corruptions", self.corruptions),
        ):
            if table:
                out.write(f"[{section}]\n")
                for key in table:
                    out.write(f"{key}: {table[key]:.4f}\n")
        return out.getvalue()

    def save(self, path) -> None:
        from pathlib import Path

        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_text())


# ---------------------------------------------------------------------------
# Feature extraction and the linear probe
# ---------------------------------------------------------------------------


def extract_features(
    encoder: Encoder,
    x: torch.Tensor,
    batch_size: int = 256,
    view_source=None,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Pre-pooling features of (optionally viewed) inputs, without gradients."""
    was_training = encoder.training
    encoder.eval()
    chunks = []
    try:
        for start in range(0, x.shape[0], batch_size):
            batch = x[start : start + batch_size]
            if view_source is not None:
                with torch.no_grad():
                    batch = view_source.single(batch, generator)
            with torch.no_grad():
                chunks.append(encoder(batch).prepool)
    finally:
        encoder.train(was_training)
    return torch.cat(chunks)


def _probe_loss(logits: torch.Tensor, labels: torch.Tensor, task_type: str) -> torch.Tensor:
    if task_type == "multilabel":
        return F.binary_cross_entropy_with_logits(logits, labels.float())
    return F.cross_entropy(logits, labels)


def _probe_score(logits: torch.Tensor, labels: torch.Tensor, task_type: str) -> float:
    """Percent accuracy, or macro-F1 for multi-label tasks."""
    if task_type == "multilabel":
        predictions = (logits > 0).long()
        truth = labels.long()
        f1_per_attribute = []
        for a in range(truth.shape[1]):
            tp = ((predictions[:, a] == 1) & (truth[:, a] == 1)).sum().item()
            fp = ((predictions[:, a] == 1) & (truth[:, a] == 0)).sum().item()
            fn = ((predictions[:, a] == 0) & (truth[:, a] == 1)).sum().item()
            denom = 2 * tp + fp + fn
            f1_per_attribute.append(2 * tp / denom if denom > 0 else 0.0)
        return 100.0 * sum(f1_per_attribute) / len(f1_per_attribute)
    return 100.0 * (logits.argmax(dim=1) == labels).float().mean().item()


def probe_output_dim(labels: torch.Tensor, task_type: str) -> int:
    if task_type == "multilabel":
        return labels.shape[1]
    return int(labels.max().item()) + 1


def linear_eval(
    encoder: Encoder,
    train_data: tuple[torch.Tensor, torch.Tensor],
    val_data: tuple[torch.Tensor, torch.Tensor],
    config: LinearEvalConfig,
    generator: torch.Generator,
    view_source=None,
    probe: nn.Linear | None = None,
) -> tuple[EvalReport, nn.Linear]:
    """Train a linear classifier on frozen pre-pool features.

    Training inputs receive views from ``view_source`` (the same source as
    pretraining, with a frozen viewmaker when learned views were used);
    validation applies no views. Reports the final epoch's validation score.
    """
    train_x, train_y = train_data
    val_x, val_y = val_data

    feature_dim = extract_features(encoder, train_x[:1]).shape[1]
    num_outputs = probe_output_dim(train_y, config.task_type)
    if probe is None:
        with torch.random.fork_rng():
            torch.manual_seed(int(torch.randint(2**31, (), generator=generator)))
            probe = nn.Linear(feature_dim, num_outputs)
    elif probe.in_features != feature_dim:
        raise CheckpointMismatch(
            f"probe expects {probe.in_features}-dim features, encoder yields {feature_dim}"
        )

    optimizer = torch.optim.SGD(
        probe.parameters(), lr=config.lr, momentum=config.momentum,
        weight_decay=config.weight_decay,
    )
    val_features = extract_features(encoder, val_x)

    num_train = train_x.shape[0]
    plain_features = None
    if view_source is None:
        plain_features = extract_features(encoder, train_x)

    final_score = 0.0
    for epoch in range(1, config.epochs + 1):
        if epoch in config.lr_drop_epochs:
            for group in optimizer.param_groups:
                group["lr"] *= config.lr_drop_factor
        order = torch.randperm(num_train, generator=generator)
        for start in range(0, num_train, config.batch_size):
            idx = order[start : start + config.batch_size]
            if view_source is not None:
                feats = extract_features(
                    encoder, train_x[idx], view_source=view_source, generator=generator
                )
            else:
                feats = plain_features[idx]
            loss = _probe_loss(probe(feats), train_y[idx], config.task_type)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
        if epoch == config.epochs:
            with torch.no_grad():
                final_score = _probe_score(probe(val_features), val_y, config.task_type)

    metric = "f1" if config.task_type == "multilabel" else "accuracy"
    return EvalReport(scores={metric: final_score}), probe


def probe_accuracy(
    encoder: Encoder,
    probe: nn.Linear,
    x: torch.Tensor,
    y: torch.Tensor,
    task_type: str = "classification",
) -> float:
    features = extract_features(encoder, x)
    if probe.in_features != features.shape[1]:
        raise CheckpointMismatch(
            f"probe expects {probe.in_features}-dim features, encoder yields {features.shape[1]}"
        )
    with torch.no_grad():
        return _probe_score(probe(features), y, task_type)


# ---------------------------------------------------------------------------
# Corruption robustness
# ---------------------------------------------------------------------------


def corruption_eval(
    encoder: Encoder,
    probe: nn.Linear,
    clean_data: tuple[torch.Tensor, torch.Tensor],
    corrupted_variants: dict,
) -> EvalReport:
    """Per-corruption accuracy of an already-trained linear model, with the
    clean / corrupted / difference summary. No parameters are updated."""
    clean_x, clean_y = clean_data
    clean_accuracy = probe_accuracy(encoder, probe, clean_x, clean_y)
    per_corruption = {}
    for name, (x, y) in corrupted_variants.items():
        per_corruption[name] = probe_accuracy(encoder, probe, x, y)
    corrupted_mean = (
        sum(per_corruption.values()) / len(per_corruption) if per_corruption else clean_accuracy
    )
    return EvalReport(
        corruptions=per_corruption,
        clean_accuracy=clean_accuracy,
        corrupted_accuracy=corrupted_mean,
        difference=corrupted_mean - clean_accuracy,
    )


def synthetic_corruptions(
    x: torch.Tensor, y: torch.Tensor, severities=(1, 2, 3, 4, 5), seed: int = 0
) -> dict:
    """Desk-scale corruption variants (noise / blur / contrast at 5 severities)."""
    import torchvision.transforms.functional as TF

    generator = torch.Generator().manual_seed(seed)
    variants = {}
    for s in severities:
        noise = x + 0.02 * s * torch.randn(x.shape, generator=generator)
        variants[f"gaussian_noise_s{s}"] = (noise.clamp(0, 1), y)
        variants[f"gaussian_blur_s{s}"] = (
            TF.gaussian_blur(x, kernel_size=5, sigma=0.3 * s).clamp(0, 1), y,
        )
        mean = x.mean(dim=(-2, -1), keepdim=True)
        factor = max(0.05, 1.0 - 0.18 * s)
        variants[f"contrast_s{s}"] = (((x - mean) * factor + mean).clamp(0, 1), y)
    return variants


# ---------------------------------------------------------------------------
# Semi-supervised comparison
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SupervisedConfig:
    """Protocol for the randomly initialized supervised arm: train until no
    validation improvement for ``patience`` epochs, up to ``max_epochs``."""

    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 128
    patience: int = 10
    max_epochs: int = 200


def _subject_subset(data, subjects):
    x, y, subject_ids = data
    known = set(subject_ids)
    for s in subjects:
        if s not in known:
            raise UnknownSubject(f"subject {s!r} has no examples in the dataset")
    mask = torch.tensor([sid in set(subjects) for sid in subject_ids])
    if not mask.any():
        raise UnknownSubject(f"labeled subset for subjects {subjects!r} is empty")
    return x[mask], y[mask]


def train_supervised(
    encoder_config,
    train_data: tuple[torch.Tensor, torch.Tensor],
    val_data: tuple[torch.Tensor, torch.Tensor],
    config: SupervisedConfig,
    generator: torch.Generator,
) -> float:
    """Supervised-from-scratch arm; returns the best validation accuracy at
    convergence (percent)."""
    train_x, train_y = train_data
    val_x, val_y = val_data
    seed = int(torch.randint(2**31, (), generator=generator))
    model = build_encoder(encoder_config, seed=seed)
    num_classes = int(max(train_y.max().item(), val_y.max().item())) + 1
    with torch.random.fork_rng():
        torch.manual_seed(seed + 1)
        feature_dim = model(train_x[:1]).prepool.shape[1]
        head = nn.Linear(feature_dim, num_classes)
    optimizer = torch.optim.SGD(
        list(model.parameters()) + list(head.parameters()),
        lr=config.lr, momentum=config.momentum, weight_decay=config.weight_decay,
    )

    best = 0.0
    stale = 0
    for _ in range(config.max_epochs):
        model.train()
        order = torch.randperm(train_x.shape[0], generator=generator)
        for start in range(0, train_x.shape[0], config.batch_size):
            idx = order[start : start + config.batch_size]
            loss = F.cross_entropy(head(model(train_x[idx]).prepool), train_y[idx])
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
        model.eval()
        with torch.no_grad():
            accuracy = 100.0 * (head(model(val_x).prepool).argmax(1) == val_y).float().mean().item()
        if accuracy > best + 1e-9:
            best = accuracy
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    return best


def semi_supervised_compare(
    data,
    labeled_subjects,
    encoder: Encoder,
    eval_config: LinearEvalConfig,
    supervised_config: SupervisedConfig,
    val_data: tuple[torch.Tensor, torch.Tensor],
    generator: torch.Generator,
    view_source=None,
) -> EvalReport:
    """Two arms on the same labeled subset: (a) supervised training of a
    randomly initialized model until convergence, and (b) linear evaluation
    of the pretrained encoder."""
    labeled = _subject_subset(data, labeled_subjects)
    supervised = train_supervised(
        encoder.config, labeled, val_data, supervised_config, generator
    )
    transfer_report, _ = linear_eval(
        encoder, labeled, val_data, eval_config, generator, view_source=view_source
    )
    metric = "f1" if eval_config.task_type == "multilabel" else "accuracy"
    return EvalReport(
        scores={
            "supervised": supervised,
            "pretrain_transfer": transfer_report.scores[metric],
            "num_labeled_subjects": float(len(labeled_subjects)),
        }
    )


# ---------------------------------------------------------------------------
# Top-k accuracy
# ---------------------------------------------------------------------------


def topk_accuracy(logits: torch.Tensor, labels: torch.Tensor, k: int) -> float:
    """Percent of examples whose true label is among the k highest logits."""
    num_classes = logits.shape[1]
    if k > num_classes:
        raise KTooLarge(f"k = {k} exceeds the number of classes ({num_classes})")
    if k < 1:
        raise KTooLarge(f"k must be >= 1, got {k}")
    top = logits.topk(k, dim=1).indices
    hits = (top == labels.unsqueeze(1)).any(dim=1)
    return 100.0 * hits.float().mean().item()
