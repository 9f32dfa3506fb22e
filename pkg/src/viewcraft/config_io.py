"""TOML config files -> experiment/evaluation dataclasses.

Every parse failure raises ConfigParseError naming the offending section and
field. Dataset paths may be relative; they resolve against the
``VIEWCRAFT_DATA_DIR`` environment variable when it is set.
"""

from __future__ import annotations

import dataclasses
import math
import os
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import augment, dataprep
from .encoder import EncoderConfig
from .errors import ConfigInvalid, ConfigParseError
from .evaluation import LinearEvalConfig, SupervisedConfig
from .perturb import PerturbationBudget
from .trainer import (
    COMBINED_DEFAULT_EPSILON,
    DatasetConfig,
    ExperimentConfig,
    ObjectiveConfig,
    OptimizerConfig,
)
from .viewmaker import ViewmakerConfig

_SPECTROGRAM_DATASETS = ("audio_manifest", "pamap2", "spectrogram_manifest")


def _read_toml(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigParseError(f"config file not found: {path}")
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigParseError(f"{path}: {exc}") from exc


def _build(section: str, cls, data: dict, **overrides):
    """Construct a config dataclass, rejecting unknown fields and re-raising
    invariant violations with the section name attached."""
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigParseError(f"[{section}] unknown field {key!r}")
    merged = {**data, **overrides}
    # TOML arrays arrive as lists; tuple-typed fields expect tuples.
    for key, value in merged.items():
        if isinstance(value, list):
            merged[key] = tuple(value)
    try:
        return cls(**merged)
    except (ConfigInvalid, TypeError, ValueError) as exc:
        raise ConfigParseError(f"[{section}] {exc}") from exc


def resolve_data_path(path: str | None) -> str | None:
    if path is None:
        return None
    p = Path(path)
    root = os.environ.get("VIEWCRAFT_DATA_DIR")
    if not p.is_absolute() and root:
        return str(Path(root) / p)
    return str(p)


def _parse_budget(section_data: dict, source: str) -> PerturbationBudget | None:
    data = dict(section_data)
    if source == "combined":
        data.setdefault("epsilon", COMBINED_DEFAULT_EPSILON)
    if source == "dct_viewmaker":
        data.setdefault("domain", "dct")
    if "epsilon" not in data:
        if source in ("expert",):
            return None
        raise ConfigParseError("[view.budget] epsilon is required for this view source")
    if data.get("p") == "inf":
        data["p"] = math.inf
    return _build("view.budget", PerturbationBudget, data)


def parse_dataset(data: dict) -> DatasetConfig:
    data = dict(data)
    spectrogram = data.pop("spectrogram", None)
    sensor = data.pop("sensor", None)
    overrides = {}
    if spectrogram is not None:
        overrides["spectrogram"] = _build(
            "dataset.spectrogram", dataprep.SpectrogramSpec, spectrogram
        )
    if sensor is not None:
        overrides["sensor"] = _build("dataset.sensor", dataprep.SensorWindowSpec, sensor)
    if "path" in data:
        data["path"] = resolve_data_path(data["path"])
    return _build("dataset", DatasetConfig, data, **overrides)


def parse_experiment_config(raw: dict) -> ExperimentConfig:
    run = dict(raw.get("run", {}))
    dataset = parse_dataset(raw.get("dataset", {}))

    view = dict(raw.get("view", {}))
    source = view.pop("source", "viewmaker")
    budget = _parse_budget(view.pop("budget", {}), source)
    if view:
        raise ConfigParseError(f"[view] unknown field {sorted(view)[0]!r}")

    viewmaker_config = None
    if source in ("viewmaker", "combined", "dct_viewmaker"):
        viewmaker_config = _build(
            "viewmaker",
            ViewmakerConfig,
            raw.get("viewmaker", {}),
            in_channels=dataset.channels,
            budget=budget,
        )

    expert = raw.get("expert", {})
    image_policy = spectral_policy = waveform_policy = None
    if "image" in expert:
        image_policy = _build("expert.image", augment.ImageExpertPolicy, expert["image"])
    if "spectral" in expert:
        spectral_policy = _build("expert.spectral", augment.SpectralMaskPolicy, expert["spectral"])
    if "waveform" in expert:
        waveform_policy = _build("expert.waveform", augment.WaveformPolicy, expert["waveform"])

    stats = None
    if "normalization" in raw:
        stats = _build("normalization", dataprep.NormStats, raw["normalization"])

    objective = _build("objective", ObjectiveConfig, raw.get("objective", {}))
    encoder_data = dict(raw.get("encoder", {}))
    encoder_data.setdefault("input_channels", dataset.channels)
    encoder = _build("encoder", EncoderConfig, encoder_data)
    optimizer = _build("optimizer", OptimizerConfig, raw.get("optimizer", {}))
    viewmaker_optimizer = None
    if "viewmaker_optimizer" in raw:
        viewmaker_optimizer = _build(
            "viewmaker_optimizer", OptimizerConfig, raw["viewmaker_optimizer"]
        )

    return _build(
        "run",
        ExperimentConfig,
        run,
        view_source=source,
        objective=objective,
        encoder=encoder,
        viewmaker=viewmaker_config,
        budget=budget,
        image_policy=image_policy,
        spectral_policy=spectral_policy,
        waveform_policy=waveform_policy,
        optimizer=optimizer,
        viewmaker_optimizer=viewmaker_optimizer,
        dataset=dataset,
    )


def load_experiment_config(path) -> ExperimentConfig:
    return parse_experiment_config(_read_toml(path))


def load_transfer_config(path) -> tuple[DatasetConfig, LinearEvalConfig, bool]:
    """Dataset, probe schedule, and whether pretrain-time views are applied
    to transfer training inputs."""
    raw = _read_toml(path)
    dataset = parse_dataset(raw.get("dataset", {}))
    eval_config = _build("linear_eval", LinearEvalConfig, raw.get("linear_eval", {}))
    use_views = bool(raw.get("views", {}).get("use_pretrain_views", True))
    return dataset, eval_config, use_views


def load_robustness_config(path) -> tuple[DatasetConfig, dict]:
    """Dataset plus the corruption plan ({kind, names, severities, path})."""
    raw = _read_toml(path)
    dataset = parse_dataset(raw.get("dataset", {}))
    corruptions = dict(raw.get("corruptions", {}))
    corruptions.setdefault("kind", "synthetic")
    if corruptions["kind"] not in ("synthetic", "manifest", "identity"):
        raise ConfigParseError(
            f"[corruptions] kind must be synthetic, manifest, or identity, "
            f"got {corruptions['kind']!r}"
        )
    if "path" in corruptions:
        corruptions["path"] = resolve_data_path(corruptions["path"])
    return dataset, corruptions


def load_semisup_config(path):
    raw = _read_toml(path)
    dataset = parse_dataset(raw.get("dataset", {}))
    semisup = dict(raw.get("semisup", {}))
    subjects = semisup.get("labeled_subjects")
    if not subjects:
        raise ConfigParseError("[semisup] labeled_subjects must list at least one subject")
    eval_config = _build("linear_eval", LinearEvalConfig, raw.get("linear_eval", {}))
    supervised = _build("supervised", SupervisedConfig, raw.get("supervised", {}))
    return dataset, list(subjects), eval_config, supervised
