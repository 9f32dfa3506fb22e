"""The alternating min-max pretraining loop.

Each step shares one forward computation: the configured view source
produces two views per input, the objective is evaluated once, the encoder
optimizer descends the loss, and the viewmaker optimizer ascends it (by
negating its gradients before stepping). The two optimizers own disjoint
parameter sets. View sources: the learned viewmaker (signal or DCT domain),
expert pipelines, expert-then-viewmaker composition, and budget-normalized
Gaussian noise.

Checkpoints are written per epoch under ``{run_dir}/step-{n}/`` with
separate encoder / viewmaker / optimizer / config / rng files; a run resumed
from any checkpoint continues bit-exactly because all randomness flows
through the single serialized generator.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn.functional as F

from . import augment, dataprep
from .checkpoint import config_from_dict
from .dataprep import DatasetConfig, load_pretrain_data
from .encoder import Encoder, EncoderConfig, build_encoder, load_encoder, save_encoder
from .errors import ConfigInvalid, IOFailure, NonFiniteLoss
from .objectives import MemoryBank, instdisc_loss, interleave_pairs, nt_xent_loss
from .perturb import PerturbationBudget, gaussian_noise_view, perturbation_norm
from .rng import seeded_generator
from .viewmaker import Viewmaker, ViewmakerConfig, build_viewmaker, generate_view, load_viewmaker, save_viewmaker

VIEW_SOURCES = ("viewmaker", "expert", "combined", "gaussian_noise", "dct_viewmaker")
OBJECTIVES = ("simclr", "instdisc")

# The combined regime pairs expert views with a weaker learned perturbation.
COMBINED_DEFAULT_EPSILON = 0.01


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 0.03
    momentum: float = 0.9
    weight_decay: float = 1e-4

    def build(self, params) -> torch.optim.SGD:
        return torch.optim.SGD(
            params, lr=self.lr, momentum=self.momentum, weight_decay=self.weight_decay
        )


@dataclass(frozen=True)
class ObjectiveConfig:
    kind: str = "simclr"
    temperature: float = 0.07
    num_negatives: int = 4096
    bank_update_rate: float = 0.5

    def __post_init__(self):
        if self.kind not in OBJECTIVES:
            raise ConfigInvalid(f"objective must be one of {OBJECTIVES}, got {self.kind!r}")
        if self.temperature <= 0:
            raise ConfigInvalid(f"objective.temperature must be > 0, got {self.temperature}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Full declarative description of one pretraining run."""

    view_source: str = "viewmaker"
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    viewmaker: ViewmakerConfig | None = None
    budget: PerturbationBudget | None = None
    image_policy: augment.ImageExpertPolicy | None = None
    spectral_policy: augment.SpectralMaskPolicy | None = None
    waveform_policy: augment.WaveformPolicy | None = None
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    viewmaker_optimizer: OptimizerConfig | None = None
    batch_size: int = 256
    epochs: int = 200
    seed: int = 0
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    stats: dataprep.NormStats | None = None
    grad_clip: float | None = None
    checkpoint_every: int = 1

    def __post_init__(self):
        if self.view_source not in VIEW_SOURCES:
            raise ConfigInvalid(
                f"view_source must be one of {VIEW_SOURCES}, got {self.view_source!r}"
            )
        needs_viewmaker = self.view_source in ("viewmaker", "combined", "dct_viewmaker")
        if needs_viewmaker and self.viewmaker is None:
            raise ConfigInvalid(f"view_source {self.view_source!r} requires a viewmaker config")
        if self.view_source == "combined" and self.image_policy is None:
            raise ConfigInvalid("view_source 'combined' requires an image expert policy")
        if self.view_source == "expert" and not any(
            (self.image_policy, self.spectral_policy, self.waveform_policy)
        ):
            raise ConfigInvalid("view_source 'expert' requires an expert policy")
        if self.view_source == "gaussian_noise" and self.budget is None:
            raise ConfigInvalid("view_source 'gaussian_noise' requires a budget")
        if self.batch_size < 2:
            raise ConfigInvalid(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigInvalid(f"epochs must be >= 1, got {self.epochs}")

    @property
    def uses_viewmaker(self) -> bool:
        return self.view_source in ("viewmaker", "combined", "dct_viewmaker")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return config_from_dict(cls, data)


# ---------------------------------------------------------------------------
# View sources
# ---------------------------------------------------------------------------


class ViewSource:
    """Produces encoder-ready views; ``pair`` also reports the mean pre-clamp
    perturbation l1 norm when a budget is in play."""

    def single(self, x: torch.Tensor, generator: torch.Generator) -> torch.Tensor:
        raise NotImplementedError

    def pair(self, x: torch.Tensor, generator: torch.Generator):
        return self.single(x, generator), self.single(x, generator), None


class ViewmakerSource(ViewSource):
    def __init__(self, model: Viewmaker):
        self.model = model

    def single(self, x, generator):
        view, _ = generate_view(self.model, x, generator)
        return view

    def pair(self, x, generator):
        view_a, pert_a = generate_view(self.model, x, generator)
        view_b, pert_b = generate_view(self.model, x, generator)
        norm = torch.cat(
            [perturbation_norm(pert_a, self.model.config.budget.p),
             perturbation_norm(pert_b, self.model.config.budget.p)]
        ).mean().item()
        return view_a, view_b, norm


class GaussianNoiseSource(ViewSource):
    def __init__(self, budget: PerturbationBudget):
        self.budget = budget

    def single(self, x, generator):
        return gaussian_noise_view(x, self.budget, generator)

    def pair(self, x, generator):
        view_a = self.single(x, generator)
        view_b = self.single(x, generator)
        return view_a, view_b, self.budget.radius(x.shape)


class ImageExpertSource(ViewSource):
    def __init__(self, policy: augment.ImageExpertPolicy):
        self.policy = policy

    def single(self, x, generator):
        return torch.stack(
            [augment.image_expert_view(img, self.policy, generator) for img in x]
        )


class SpectralMaskSource(ViewSource):
    def __init__(self, policy: augment.SpectralMaskPolicy):
        self.policy = policy

    def single(self, x, generator):
        return torch.stack(
            [augment.spectral_mask_view(s, self.policy, generator) for s in x]
        )


class CombinedSource(ViewSource):
    """Expert pipeline first, then a viewmaker perturbation on the result."""

    def __init__(self, expert: ImageExpertSource, model: Viewmaker):
        self.expert = expert
        self.inner = ViewmakerSource(model)

    def single(self, x, generator):
        return self.inner.single(self.expert.single(x, generator), generator)

    def pair(self, x, generator):
        view_a, pert_a = generate_view(
            self.inner.model, self.expert.single(x, generator), generator
        )
        view_b, pert_b = generate_view(
            self.inner.model, self.expert.single(x, generator), generator
        )
        budget = self.inner.model.config.budget
        norm = torch.cat(
            [perturbation_norm(pert_a, budget.p), perturbation_norm(pert_b, budget.p)]
        ).mean().item()
        return view_a, view_b, norm


class WaveformExpertSource(ViewSource):
    """Time-domain views: crop+noise on raw waveforms, then the log-mel
    pipeline (train-mode truncation) and optional standardization."""

    def __init__(
        self,
        policy: augment.WaveformPolicy,
        spec: dataprep.SpectrogramSpec,
        stats: dataprep.NormStats | None = None,
    ):
        self.policy = policy
        self.spec = spec
        self.stats = stats

    def single(self, waveforms, generator):
        spectrograms = []
        for w in waveforms:
            viewed = augment.waveform_view(w, self.policy, generator)
            s = dataprep.waveform_to_logmel(viewed, self.spec, mode="train", generator=generator)
            if self.stats is not None:
                s = dataprep.normalize(s, self.stats)
            spectrograms.append(s)
        return torch.stack(spectrograms)


class NormalizedViewSource(ViewSource):
    """Standardizes views after generation (images are viewed in [0, 1] but
    encoded on the training distribution's scale)."""

    def __init__(self, inner: ViewSource, stats: dataprep.NormStats):
        self.inner = inner
        self.stats = stats

    def single(self, x, generator):
        return dataprep.normalize(self.inner.single(x, generator), self.stats)

    def pair(self, x, generator):
        view_a, view_b, norm = self.inner.pair(x, generator)
        return (
            dataprep.normalize(view_a, self.stats),
            dataprep.normalize(view_b, self.stats),
            norm,
        )


def build_view_source(config: ExperimentConfig, viewmaker: Viewmaker | None) -> ViewSource:
    source = config.view_source
    if source in ("viewmaker", "dct_viewmaker"):
        return ViewmakerSource(viewmaker)
    if source == "gaussian_noise":
        return GaussianNoiseSource(config.budget)
    if source == "combined":
        return CombinedSource(ImageExpertSource(config.image_policy), viewmaker)
    # expert
    if config.image_policy is not None:
        return ImageExpertSource(config.image_policy)
    if config.spectral_policy is not None:
        return SpectralMaskSource(config.spectral_policy)
    if config.dataset.spectrogram is None:
        raise ConfigInvalid("waveform expert views require a dataset spectrogram spec")
    return WaveformExpertSource(config.waveform_policy, config.dataset.spectrogram, config.stats)


# ---------------------------------------------------------------------------
# Train state
# ---------------------------------------------------------------------------


@dataclass
class TrainState:
    config: ExperimentConfig
    encoder: Encoder
    viewmaker: Viewmaker | None
    encoder_opt: torch.optim.SGD
    viewmaker_opt: torch.optim.SGD | None
    bank: MemoryBank | None
    generator: torch.Generator
    epoch: int = 0
    step: int = 0

    @property
    def view_source(self) -> ViewSource:
        if getattr(self, "_source", None) is None:
            self._source = build_view_source(self.config, self.viewmaker)
        return self._source


def init_train_state(config: ExperimentConfig, num_examples: int) -> TrainState:
    encoder = build_encoder(config.encoder, seed=config.seed)
    viewmaker = None
    viewmaker_opt = None
    if config.uses_viewmaker:
        viewmaker = build_viewmaker(config.viewmaker, seed=config.seed + 1)
        vm_opt_config = config.viewmaker_optimizer or config.optimizer
        viewmaker_opt = vm_opt_config.build(viewmaker.parameters())
    encoder_opt = config.optimizer.build(encoder.parameters())
    generator = seeded_generator(config.seed)
    bank = None
    if config.objective.kind == "instdisc":
        # The sampler needs num_negatives <= M - 1.
        negatives = min(config.objective.num_negatives, num_examples - 1)
        bank = MemoryBank.initialize(
            num_examples,
            config.encoder.embedding_dim,
            generator,
            update_rate=config.objective.bank_update_rate,
            num_negatives=negatives,
        )
    return TrainState(
        config=config,
        encoder=encoder,
        viewmaker=viewmaker,
        encoder_opt=encoder_opt,
        viewmaker_opt=viewmaker_opt,
        bank=bank,
        generator=generator,
    )


def _grad_norm(module) -> float:
    total = 0.0
    for p in module.parameters():
        if p.grad is not None:
            total += p.grad.pow(2).sum().item()
    return math.sqrt(total)


def pretrain_step(
    state: TrainState, batch: torch.Tensor, indices: torch.Tensor | None = None
) -> dict:
    """One shared-forward min-max step; returns the step's metrics.

    Inputs are never mutated. With an expert or noise view source the
    viewmaker update is a no-op (no viewmaker exists).
    """
    config = state.config
    start = time.monotonic()

    view_a, view_b, pert_norm = state.view_source.pair(batch, state.generator)
    if config.stats is not None:
        view_a = dataprep.normalize(view_a, config.stats)
        view_b = dataprep.normalize(view_b, config.stats)

    emb_a = state.encoder(view_a).embedding
    emb_b = state.encoder(view_b).embedding

    if config.objective.kind == "simclr":
        loss = nt_xent_loss(interleave_pairs(emb_a, emb_b), config.objective.temperature)
    else:
        paired = torch.cat([emb_a, emb_b], dim=0)
        paired_idx = torch.cat([indices, indices], dim=0)
        loss = instdisc_loss(
            paired, paired_idx, state.bank, config.objective.temperature, state.generator
        )

    if not torch.isfinite(loss):
        raise NonFiniteLoss(f"loss became {loss.item()} at step {state.step}")

    state.encoder_opt.zero_grad(set_to_none=True)
    if state.viewmaker_opt is not None:
        state.viewmaker_opt.zero_grad(set_to_none=True)
    loss.backward()

    if config.grad_clip is not None:
        torch.nn.utils.clip_grad_norm_(state.encoder.parameters(), config.grad_clip)
        if state.viewmaker is not None:
            torch.nn.utils.clip_grad_norm_(state.viewmaker.parameters(), config.grad_clip)

    encoder_grad = _grad_norm(state.encoder)
    state.encoder_opt.step()

    viewmaker_grad = 0.0
    if state.viewmaker_opt is not None:
        viewmaker_grad = _grad_norm(state.viewmaker)
        # Ascent on the shared loss: flip the sign of the viewmaker gradients.
        for p in state.viewmaker.parameters():
            if p.grad is not None:
                p.grad.neg_()
        state.viewmaker_opt.step()

    if state.bank is not None:
        mean_embedding = F.normalize(emb_a.detach() + emb_b.detach(), dim=-1)
        state.bank.update(mean_embedding, indices)

    state.step += 1
    return {
        "step": state.step,
        "loss": loss.item(),
        "perturbation_norm": pert_norm,
        "lr": state.encoder_opt.param_groups[0]["lr"],
        "wall_time": time.monotonic() - start,
        "encoder_grad_norm": encoder_grad,
        "viewmaker_grad_norm": viewmaker_grad,
    }


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------


def save_train_state(state: TrainState, step_dir) -> Path:
    step_dir = Path(step_dir)
    step_dir.mkdir(parents=True, exist_ok=True)
    save_encoder(state.encoder, step_dir / "encoder.pt")
    if state.viewmaker is not None:
        save_viewmaker(state.viewmaker, step_dir / "viewmaker.pt")
    optimizer_payload = {
        "encoder_opt": state.encoder_opt.state_dict(),
        "viewmaker_opt": state.viewmaker_opt.state_dict() if state.viewmaker_opt else None,
        "bank": None
        if state.bank is None
        else {
            "slots": state.bank.slots,
            "update_rate": state.bank.update_rate,
            "num_negatives": state.bank.num_negatives,
        },
        "epoch": state.epoch,
        "step": state.step,
    }
    torch.save(optimizer_payload, step_dir / "optimizer.pt")
    (step_dir / "config.json").write_text(json.dumps(state.config.to_dict(), indent=2))
    torch.save({"generator": state.generator.get_state()}, step_dir / "rng.pt")
    return step_dir


def load_train_state(step_dir) -> TrainState:
    step_dir = Path(step_dir)
    if not step_dir.exists():
        raise IOFailure(f"checkpoint directory not found: {step_dir}")
    config = ExperimentConfig.from_dict(json.loads((step_dir / "config.json").read_text()))
    encoder = load_encoder(step_dir / "encoder.pt")
    viewmaker = None
    viewmaker_opt = None
    if (step_dir / "viewmaker.pt").exists():
        viewmaker = load_viewmaker(step_dir / "viewmaker.pt")
        vm_opt_config = config.viewmaker_optimizer or config.optimizer
        viewmaker_opt = vm_opt_config.build(viewmaker.parameters())
    encoder_opt = config.optimizer.build(encoder.parameters())

    saved = torch.load(step_dir / "optimizer.pt", weights_only=False)
    encoder_opt.load_state_dict(saved["encoder_opt"])
    if viewmaker_opt is not None and saved["viewmaker_opt"] is not None:
        viewmaker_opt.load_state_dict(saved["viewmaker_opt"])
    bank = None
    if saved["bank"] is not None:
        bank = MemoryBank(
            slots=saved["bank"]["slots"],
            update_rate=saved["bank"]["update_rate"],
            num_negatives=saved["bank"]["num_negatives"],
        )
    generator = torch.Generator()
    generator.set_state(torch.load(step_dir / "rng.pt", weights_only=False)["generator"])
    return TrainState(
        config=config,
        encoder=encoder,
        viewmaker=viewmaker,
        encoder_opt=encoder_opt,
        viewmaker_opt=viewmaker_opt,
        bank=bank,
        generator=generator,
        epoch=saved["epoch"],
        step=saved["step"],
    )


def pretrain(
    config: ExperimentConfig,
    out_dir,
    data=None,
    resume=None,
    log=None,
) -> Path:
    """Run the full pretraining loop; returns the final checkpoint directory.

    ``resume`` names a previously written step directory; the continued run
    is bit-identical to an uninterrupted one on the same platform.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if data is None:
        data = load_pretrain_data(config.dataset)
    num_examples = len(data)
    if num_examples < config.batch_size:
        raise ConfigInvalid(
            f"dataset of {num_examples} examples is smaller than batch_size {config.batch_size}"
        )

    if resume is not None:
        state = load_train_state(resume)
        if state.config != config:
            raise ConfigInvalid("resume checkpoint was written by a different config")
    else:
        state = init_train_state(config, num_examples)

    metrics_path = out_dir / "metrics.jsonl"
    is_tensor_data = isinstance(data, torch.Tensor)
    final_dir = None

    with metrics_path.open("a") as metrics_file:
        for epoch in range(state.epoch, config.epochs):
            order = torch.randperm(num_examples, generator=state.generator)
            num_batches = num_examples // config.batch_size
            for b in range(num_batches):
                idx = order[b * config.batch_size : (b + 1) * config.batch_size]
                batch = data[idx] if is_tensor_data else [data[i] for i in idx.tolist()]
                record = pretrain_step(state, batch, idx)
                metrics_file.write(json.dumps(record) + "\n")
            metrics_file.flush()
            state.epoch = epoch + 1
            if log is not None:
                log(f"epoch {state.epoch}/{config.epochs} loss={record['loss']:.4f}")
            last_epoch = state.epoch == config.epochs
            if last_epoch or state.epoch % config.checkpoint_every == 0:
                final_dir = save_train_state(state, out_dir / f"step-{state.step}")
    if final_dir is None:
        raise IOFailure("pretraining finished without writing a checkpoint")
    return final_dir
