"""Config-driven command surface.

Verbs: pretrain | transfer | robustness | semisup | export-views |
make-corners | audit-corners. Every command is reproducible from
(config file, seed, code version); exit status is 0 iff the run completed
and all outputs were written.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import subprocess
import time
from dataclasses import dataclass, replace
from pathlib import Path

import click
import torch

from . import __version__, config_io, dataprep, evaluation, trainer, viz
from .encoder import load_encoder
from .errors import CheckpointMismatch, IOFailure, ViewcraftError
from .rng import seeded_generator
from .trainer import ExperimentConfig, NormalizedViewSource, build_view_source
from .viewmaker import generate_view, load_viewmaker

# Dataset kinds whose inputs live in [0, 1] and are standardized after views.
_PIXEL_KINDS = ("synthetic_images", "synthetic_blobs", "synthetic_subjects",
                "image_manifest", "cifar10")


@dataclass
class RunManifest:
    run_id: str
    config_hash: str
    code_version: str
    started: str
    ended: str | None = None
    artifacts: dict = dataclasses.field(default_factory=dict)

    def save(self, directory: Path) -> None:
        (directory / "manifest.json").write_text(
            json.dumps(dataclasses.asdict(self), indent=2)
        )


def _code_version() -> str:
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True, text=True, timeout=5,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"{__version__}+{rev}" if rev else __version__


def _timestamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S")


def _config_hash(payload: dict) -> str:
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True, default=str).encode()
    ).hexdigest()[:16]


def _start_manifest(run_id: str, run_dir: Path, config_payload: dict) -> RunManifest:
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        run_id=run_id,
        config_hash=_config_hash(config_payload),
        code_version=_code_version(),
        started=_timestamp(),
    )
    manifest.save(run_dir)
    return manifest


def _finish_manifest(manifest: RunManifest, run_dir: Path, **artifacts) -> None:
    manifest.ended = _timestamp()
    manifest.artifacts = {k: str(v) for k, v in artifacts.items()}
    manifest.save(run_dir)


def _fail(exc: Exception) -> click.ClickException:
    return click.ClickException(f"{type(exc).__name__}: {exc}")


def _load_step_dir(checkpoint: str):
    step_dir = Path(checkpoint)
    if not step_dir.exists():
        raise click.ClickException(f"checkpoint path does not exist: {step_dir}")
    config_file = step_dir / "config.json"
    if not config_file.exists():
        raise click.ClickException(f"not a run checkpoint (missing config.json): {step_dir}")
    pre_config = ExperimentConfig.from_dict(json.loads(config_file.read_text()))
    encoder = load_encoder(step_dir / "encoder.pt")
    viewmaker = None
    if (step_dir / "viewmaker.pt").exists():
        viewmaker = load_viewmaker(step_dir / "viewmaker.pt")
    return step_dir, pre_config, encoder, viewmaker


def _transfer_view_source(pre_config, viewmaker, stats):
    """The frozen pretrain-time view source, wrapped with standardization for
    pixel datasets."""
    if pre_config.view_source == "expert" and pre_config.waveform_policy is not None:
        # Time-domain views act on raw waveforms; transfer inputs are
        # already spectrograms, so no train-time views are applied.
        return None
    source = build_view_source(pre_config, viewmaker)
    if stats is not None:
        source = NormalizedViewSource(source, stats)
    return source


@click.group()
@click.version_option(version=__version__, prog_name="viewcraft")
def main():
    """Learned bounded-adversary views for contrastive pretraining."""


# ---------------------------------------------------------------------------
# pretrain
# ---------------------------------------------------------------------------


@main.command("pretrain")
@click.option("--config", "config_path", required=True, type=click.Path(),
              help="Experiment TOML file.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out", type=click.Path(), default="runs", show_default=True)
@click.option("--resume", type=click.Path(), default=None,
              help="Step directory of a previous checkpoint to continue from.")
@click.option("--dry-run", is_flag=True,
              help="Validate the config and print the resolved plan without training.")
def cmd_pretrain(config_path, seed, out, resume, dry_run):
    """Run min-max pretraining and write checkpoints plus metrics."""
    try:
        config = config_io.load_experiment_config(config_path)
        if seed is not None:
            config = replace(config, seed=seed)
        if dry_run:
            click.echo(json.dumps(config.to_dict(), indent=2, default=str))
            click.echo("dry run: config valid, nothing trained")
            return
        if resume is not None:
            resume = Path(resume)
            if not resume.exists():
                raise IOFailure(f"resume checkpoint not found: {resume}")
            run_dir = resume.parent
            run_id = run_dir.name
        else:
            run_id = f"{Path(config_path).stem}-seed{config.seed}"
            run_dir = Path(out) / run_id
            if run_dir.exists():
                raise IOFailure(
                    f"run directory already exists: {run_dir} (use --resume or a new --out)"
                )
        manifest = _start_manifest(run_id, run_dir, config.to_dict())
        final = trainer.pretrain(config, run_dir, resume=resume, log=click.echo)
        _finish_manifest(
            manifest, run_dir,
            final_checkpoint=final, metrics=run_dir / "metrics.jsonl",
        )
        click.echo(f"final checkpoint: {final}")
    except ViewcraftError as exc:
        raise _fail(exc)


# ---------------------------------------------------------------------------
# transfer
# ---------------------------------------------------------------------------


@main.command("transfer")
@click.option("--checkpoint", required=True, type=click.Path(),
              help="Pretraining step directory (contains encoder.pt).")
@click.option("--config", "config_path", required=True, type=click.Path(),
              help="Transfer TOML file ([dataset] + [linear_eval]).")
@click.option("--out", type=click.Path(), default="transfer-out", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def cmd_transfer(checkpoint, config_path, out, seed):
    """Linear evaluation on frozen features; writes report.txt and probe.pt."""
    try:
        step_dir, pre_config, encoder, viewmaker = _load_step_dir(checkpoint)
        dataset_cfg, eval_cfg, use_views = config_io.load_transfer_config(config_path)
        (train_x, train_y), (val_x, val_y) = dataprep.load_labeled_splits(dataset_cfg)

        stats = None
        if dataset_cfg.kind in _PIXEL_KINDS:
            stats = dataprep.compute_norm_stats(train_x)
            val_x = dataprep.normalize(val_x, stats)

        view_source = _transfer_view_source(pre_config, viewmaker, stats) if use_views else None
        if view_source is None and stats is not None:
            train_x = dataprep.normalize(train_x, stats)

        generator = seeded_generator(seed)
        report, probe = evaluation.linear_eval(
            encoder, (train_x, train_y), (val_x, val_y), eval_cfg, generator,
            view_source=view_source,
        )

        out_dir = Path(out)
        manifest = _start_manifest(out_dir.name, out_dir, {"checkpoint": str(step_dir)})
        report.save(out_dir / "report.txt")
        torch.save(
            {
                "state_dict": probe.state_dict(),
                "in_features": probe.in_features,
                "out_features": probe.out_features,
                "task_type": eval_cfg.task_type,
                "stats": None if stats is None else dataclasses.asdict(stats),
                "encoder_checkpoint": str(step_dir / "encoder.pt"),
            },
            out_dir / "probe.pt",
        )
        # Self-contained bundle: robustness runs load the encoder from here.
        torch.save(torch.load(step_dir / "encoder.pt", weights_only=False), out_dir / "encoder.pt")
        _finish_manifest(manifest, out_dir, report=out_dir / "report.txt",
                         probe=out_dir / "probe.pt")
        click.echo(report.to_text().rstrip())
    except ViewcraftError as exc:
        raise _fail(exc)


# ---------------------------------------------------------------------------
# robustness
# ---------------------------------------------------------------------------


def _corruption_variants(plan: dict, raw_val, stats, seed: int) -> dict:
    val_x, val_y = raw_val
    kind = plan["kind"]
    names = plan.get("names")
    variants: dict = {}
    if kind == "identity":
        variants["identity"] = (val_x, val_y)
    elif kind == "synthetic":
        severities = tuple(plan.get("severities", (1, 2, 3, 4, 5)))
        variants = evaluation.synthetic_corruptions(val_x, val_y, severities, seed=seed)
        variants["identity"] = (val_x, val_y)
    else:  # manifest: one image manifest per corruption under plan["path"]
        root = Path(plan["path"])
        for manifest_file in sorted(root.glob("*.jsonl")):
            x, y = dataprep.load_image_manifest(manifest_file, split=None)
            variants[manifest_file.stem] = (x, y)
        if not variants:
            raise IOFailure(f"no corruption manifests under {root}")
    if names:
        missing = [n for n in names if n not in variants]
        if missing:
            raise IOFailure(f"unknown corruption names: {missing}")
        variants = {n: variants[n] for n in names}
    if stats is not None:
        variants = {
            name: (dataprep.normalize(x, stats), y) for name, (x, y) in variants.items()
        }
    return variants


@main.command("robustness")
@click.option("--transfer", "transfer_dir", required=True, type=click.Path(),
              help="Output directory of a transfer run (probe.pt + encoder.pt).")
@click.option("--config", "config_path", required=True, type=click.Path(),
              help="Robustness TOML file ([dataset] + [corruptions]).")
@click.option("--out", type=click.Path(), default="robustness-out", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def cmd_robustness(transfer_dir, config_path, out, seed):
    """Evaluate a trained linear model on corrupted variants; no retraining."""
    try:
        transfer_dir = Path(transfer_dir)
        probe_file = transfer_dir / "probe.pt"
        if not probe_file.exists():
            raise IOFailure(f"probe checkpoint not found: {probe_file}")
        payload = torch.load(probe_file, weights_only=False)
        encoder_file = transfer_dir / "encoder.pt"
        if not encoder_file.exists():
            encoder_file = Path(payload["encoder_checkpoint"])
        if not encoder_file.exists():
            raise IOFailure(f"encoder checkpoint not found: {encoder_file}")
        encoder = load_encoder(encoder_file)

        probe = torch.nn.Linear(payload["in_features"], payload["out_features"])
        probe.load_state_dict(payload["state_dict"])
        stats = None
        if payload["stats"] is not None:
            stats = dataprep.NormStats(
                mean=tuple(payload["stats"]["mean"]), std=tuple(payload["stats"]["std"])
            )

        dataset_cfg, plan = config_io.load_robustness_config(config_path)
        _, (val_x, val_y) = dataprep.load_labeled_splits(dataset_cfg)
        variants = _corruption_variants(plan, (val_x, val_y), stats, seed)
        clean = (dataprep.normalize(val_x, stats), val_y) if stats is not None else (val_x, val_y)

        report = evaluation.corruption_eval(encoder, probe, clean, variants)
        out_dir = Path(out)
        manifest = _start_manifest(out_dir.name, out_dir, {"transfer": str(transfer_dir)})
        report.save(out_dir / "report.txt")
        _finish_manifest(manifest, out_dir, report=out_dir / "report.txt")
        click.echo(report.to_text().rstrip())
    except ViewcraftError as exc:
        raise _fail(exc)


# ---------------------------------------------------------------------------
# semisup
# ---------------------------------------------------------------------------


@main.command("semisup")
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out", type=click.Path(), default="semisup-out", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def cmd_semisup(checkpoint, config_path, out, seed):
    """Supervised-from-scratch vs pretrain-and-transfer on a labeled subject subset."""
    try:
        step_dir, pre_config, encoder, viewmaker = _load_step_dir(checkpoint)
        dataset_cfg, subjects, eval_cfg, sup_cfg = config_io.load_semisup_config(config_path)

        x, y, subject_ids = dataprep.load_subject_data(dataset_cfg)
        train_subjects, val_subjects = dataprep._pamap2_splits(dataset_cfg, subject_ids) \
            if dataset_cfg.kind == "pamap2" else (None, None)
        if dataset_cfg.kind == "pamap2":
            train_mask = torch.tensor([s in train_subjects for s in subject_ids])
            stats = dataprep.compute_norm_stats(x[train_mask])
            x = dataprep.normalize(x, stats)
            val_mask = torch.tensor([s in val_subjects for s in subject_ids])
            val_data = (x[val_mask], y[val_mask])
            keep = train_mask
            data = (x[keep], y[keep], [s for s, k in zip(subject_ids, keep) if k])
            view_stats = None
        else:
            val_x, val_y = dataprep.synthetic_blobs(
                dataset_cfg.val_size or max(2, dataset_cfg.size // 2),
                dataset_cfg.channels, dataset_cfg.height, dataset_cfg.width,
                dataset_cfg.seed + 1,
            )
            view_stats = dataprep.compute_norm_stats(x)
            val_data = (dataprep.normalize(val_x, view_stats), val_y)
            data = (x, y, subject_ids)

        view_source = _transfer_view_source(pre_config, viewmaker, view_stats)
        generator = seeded_generator(seed)
        report = evaluation.semi_supervised_compare(
            data, subjects, encoder, eval_cfg, sup_cfg, val_data, generator,
            view_source=view_source,
        )
        out_dir = Path(out)
        manifest = _start_manifest(out_dir.name, out_dir, {"checkpoint": str(step_dir)})
        report.save(out_dir / "report.txt")
        _finish_manifest(manifest, out_dir, report=out_dir / "report.txt")
        click.echo(report.to_text().rstrip())
    except ViewcraftError as exc:
        raise _fail(exc)


# ---------------------------------------------------------------------------
# export-views
# ---------------------------------------------------------------------------


def _load_inputs(path: Path) -> torch.Tensor:
    if path.suffix == ".pt":
        tensor = torch.load(path, weights_only=False)
        if tensor.dim() == 3:
            tensor = tensor.unsqueeze(0)
        return tensor
    if path.is_dir():
        files = sorted(path.glob("*.png"))
        if not files:
            raise IOFailure(f"no .png files under {path}")
        return torch.stack([dataprep.load_image(f) for f in files])
    return dataprep.load_image(path).unsqueeze(0)


@main.command("export-views")
@click.option("--checkpoint", required=True, type=click.Path(),
              help="Step directory or a viewmaker.pt archive.")
@click.option("--inputs", "inputs_path", required=True, type=click.Path(),
              help="A .pt tensor, a .png image, or a directory of .png files.")
@click.option("--out", type=click.Path(), default="views-out", show_default=True)
@click.option("--count", type=int, default=4, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--style", type=click.Choice(["auto", "image", "diff"]), default="auto",
              show_default=True, help="Direct tiles or signed difference maps.")
@click.option("--channel", type=int, default=0, show_default=True,
              help="Channel rendered in diff style.")
def cmd_export_views(checkpoint, inputs_path, out, count, seed, style, channel):
    """Render 3x3 view grids: the original (pink border) ringed by 8 views."""
    try:
        ckpt = Path(checkpoint)
        if not ckpt.exists():
            raise IOFailure(f"checkpoint path does not exist: {ckpt}")
        model = load_viewmaker(ckpt / "viewmaker.pt" if ckpt.is_dir() else ckpt)
        inputs = _load_inputs(Path(inputs_path))
        if inputs.shape[1] != model.config.in_channels:
            raise CheckpointMismatch(
                f"viewmaker expects {model.config.in_channels} channels, "
                f"inputs have {inputs.shape[1]}"
            )
        generator = seeded_generator(seed)
        out_dir = Path(out)
        written = []
        for i in range(min(count, inputs.shape[0])):
            x = inputs[i]
            views = [generate_view(model, x, generator)[0].detach() for _ in range(8)]
            grid = viz.render_view_grid(x, views, style=style, channel=channel)
            target = out_dir / f"grid-{i:03d}.png"
            viz.save_png(grid, target)
            written.append(target)
        click.echo(f"wrote {len(written)} grid(s) to {out_dir}")
    except ViewcraftError as exc:
        raise _fail(exc)


# ---------------------------------------------------------------------------
# make-corners / audit-corners
# ---------------------------------------------------------------------------


def _load_image_set(directory: Path):
    """Images plus per-image labels from a manifest dir or a plain png dir."""
    manifest = directory / "manifest.jsonl"
    if manifest.exists():
        records = dataprep.read_manifest(manifest)
        images = torch.stack([dataprep.load_image(directory / r.path) for r in records])
        return images, records
    files = sorted(directory.glob("*.png"))
    if not files:
        raise IOFailure(f"no manifest.jsonl or .png files under {directory}")
    images = torch.stack([dataprep.load_image(f) for f in files])
    records = [dataprep.ManifestRecord(path=f.name) for f in files]
    return images, records


def _save_image_set(images: torch.Tensor, records, directory: Path, prefix: str):
    from PIL import Image
    import numpy as np

    directory.mkdir(parents=True, exist_ok=True)
    out_records = []
    for i in range(images.shape[0]):
        name = f"{prefix}-{i:05d}.png"
        array = (images[i].clamp(0, 1) * 255).round().byte().permute(1, 2, 0).numpy()
        Image.fromarray(np.ascontiguousarray(array)).save(directory / name, format="PNG")
        out_records.append(dataclasses.replace(records[i], path=name))
    dataprep.write_manifest(out_records, directory / "manifest.jsonl")


@main.command("make-corners")
@click.option("--input", "input_dir", required=True, type=click.Path())
@click.option("--out", type=click.Path(), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
def cmd_make_corners(input_dir, out, seed):
    """Derive the low inter-patch-mutual-information dataset: every image
    quadrant is replaced by the same quadrant of another training image."""
    try:
        images, records = _load_image_set(Path(input_dir))
        corners = dataprep.make_corners_dataset(images, seeded_generator(seed))
        _save_image_set(corners, records, Path(out), prefix="corners")
        click.echo(f"wrote {corners.shape[0]} corners images to {out}")
    except ViewcraftError as exc:
        raise _fail(exc)


@main.command("audit-corners")
@click.option("--derived", required=True, type=click.Path())
@click.option("--source", required=True, type=click.Path())
def cmd_audit_corners(derived, source):
    """Verify every derived quadrant traces to a source image and none to the
    original at the same index. Exits non-zero on any violation."""
    try:
        derived_images, _ = _load_image_set(Path(derived))
        source_images, _ = _load_image_set(Path(source))
        result = dataprep.audit_corners(derived_images, source_images)
        click.echo(
            f"quadrants traced to source: {result['traced']}/{result['total']}; "
            f"traced to original: {result['self_traced']}/{result['total']}"
        )
        if result["traced"] != result["total"] or result["self_traced"] != 0:
            raise click.ClickException("corners provenance audit failed")
    except ViewcraftError as exc:
        raise _fail(exc)


if __name__ == "__main__":
    main()
