"""Dataset adapters and deterministic preprocessing.

Covers per-channel standardization, log-mel spectrograms for waveforms,
sensor windowing into multi-channel spectrogram stacks, the low
inter-patch-mutual-information "corners" dataset construction, and a
line-delimited manifest format for pointing at raw files on disk. No
download logic lives here; a data directory is assumed to exist.
"""

from __future__ import annotations

import hashlib
import json
import math
import pickle
import wave
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import (
    ConfigInvalid,
    DatasetTooSmall,
    EmptyInput,
    IOFailure,
    ShapeMismatch,
    WindowOutOfBounds,
    ZeroVariance,
)

# ---------------------------------------------------------------------------
# Normalization stats
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NormStats:
    """Per-channel mean and standard deviation computed on the training split."""

    mean: tuple[float, ...]
    std: tuple[float, ...]

    def __post_init__(self):
        if any(s <= 0 for s in self.std):
            raise ZeroVariance(f"std must be > 0 in every channel, got {self.std}")


def compute_norm_stats(x: torch.Tensor) -> NormStats:
    """Stats over an N x C x H x W (or N x C x ...) training tensor."""
    if x.dim() < 2:
        raise ShapeMismatch(f"expected at least N x C data, got shape {tuple(x.shape)}")
    reduce_dims = [d for d in range(x.dim()) if d != 1]
    mean = x.mean(dim=reduce_dims)
    std = x.std(dim=reduce_dims, unbiased=False)
    if (std < 1e-12).any():
        dead = [i for i, s in enumerate(std.tolist()) if s < 1e-12]
        raise ZeroVariance(f"channels {dead} have zero variance")
    return NormStats(mean=tuple(mean.tolist()), std=tuple(std.tolist()))


def _stats_tensors(stats: NormStats, x: torch.Tensor):
    shape = [1] * x.dim()
    channel_dim = x.dim() - 3 if x.dim() >= 3 else x.dim() - 1
    shape[channel_dim] = len(stats.mean)
    mean = torch.tensor(stats.mean, dtype=x.dtype, device=x.device).reshape(shape)
    std = torch.tensor(stats.std, dtype=x.dtype, device=x.device).reshape(shape)
    return mean, std


def normalize(x: torch.Tensor, stats: NormStats) -> torch.Tensor:
    mean, std = _stats_tensors(stats, x)
    return (x - mean) / std


def denormalize(x: torch.Tensor, stats: NormStats) -> torch.Tensor:
    mean, std = _stats_tensors(stats, x)
    return x * std + mean


# ---------------------------------------------------------------------------
# Waveform -> log mel spectrogram
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectrogramSpec:
    """Square log-mel spectrogram parameters.

    The two reference settings: hop 2360 / window 64 / 64 mels -> 64x64, and
    hop 672 / window 112 / 112 mels -> 112x112, both on waveforms truncated
    to ``max_frames`` samples.
    """

    hop: int
    fft_window: int
    n_mels: int
    max_frames: int = 150_000
    sample_rate: int = 16_000
    mel: bool = True
    power_to_db: bool = True

    def __post_init__(self):
        if min(self.hop, self.fft_window, self.n_mels, self.max_frames, self.sample_rate) < 1:
            raise ConfigInvalid("all SpectrogramSpec dimensions must be >= 1")

    @property
    def out_size(self) -> int:
        return self.n_mels if self.mel else self.fft_window // 2 + 1


SPEECH_64 = SpectrogramSpec(hop=2360, fft_window=64, n_mels=64)
SPEECH_112 = SpectrogramSpec(hop=672, fft_window=112, n_mels=112)

_MEL_CACHE: dict = {}


def mel_filterbank(n_freqs: int, n_mels: int, sample_rate: int) -> torch.Tensor:
    """Triangular mel filterbank (n_mels x n_freqs), HTK mel scale."""
    key = (n_freqs, n_mels, sample_rate)
    cached = _MEL_CACHE.get(key)
    if cached is not None:
        return cached

    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    mel_points = np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    freqs = np.linspace(0.0, sample_rate / 2.0, n_freqs)
    bank = np.zeros((n_mels, n_freqs))
    for m in range(n_mels):
        lower, center, upper = hz_points[m], hz_points[m + 1], hz_points[m + 2]
        rising = (freqs - lower) / max(center - lower, 1e-12)
        falling = (upper - freqs) / max(upper - center, 1e-12)
        bank[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    result = torch.from_numpy(bank).float()
    _MEL_CACHE[key] = result
    return result


def power_to_db(power: torch.Tensor, amin: float = 1e-10) -> torch.Tensor:
    return 10.0 * torch.log10(power.clamp_min(amin))


def _truncate_or_pad(w: torch.Tensor, max_frames: int, mode: str, generator) -> torch.Tensor:
    n = w.shape[0]
    if n > max_frames:
        # Training randomly drops the head or the tail; evaluation always
        # drops the tail.
        drop_head = mode == "train" and bool(torch.randint(0, 2, (), generator=generator).item())
        return w[n - max_frames :] if drop_head else w[:max_frames]
    if n < max_frames:
        return torch.cat([w, torch.zeros(max_frames - n, dtype=w.dtype)])
    return w


def waveform_to_logmel(
    w: torch.Tensor,
    spec: SpectrogramSpec,
    mode: str = "eval",
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """1 x S x S log-mel spectrogram of a raw waveform.

    Pipeline: truncate/pad to max_frames, STFT with the given hop and
    window, mel projection, square magnitudes, power to decibels, then fix
    the time axis to exactly S frames (the declared square shape).
    """
    if mode not in ("train", "eval"):
        raise ConfigInvalid(f"mode must be 'train' or 'eval', got {mode!r}")
    w = torch.as_tensor(w, dtype=torch.float32).reshape(-1)
    if w.numel() == 0:
        raise EmptyInput("cannot compute a spectrogram of an empty waveform")
    w = _truncate_or_pad(w, spec.max_frames, mode, generator)

    window = torch.hann_window(spec.fft_window, dtype=w.dtype)
    stft = torch.stft(
        w,
        n_fft=spec.fft_window,
        hop_length=spec.hop,
        win_length=spec.fft_window,
        window=window,
        center=True,
        return_complex=True,
    )
    power = stft.abs() ** 2  # (n_freqs, frames)
    if spec.mel:
        bank = mel_filterbank(power.shape[0], spec.n_mels, spec.sample_rate).to(power.dtype)
        power = bank @ power
    out = power_to_db(power) if spec.power_to_db else power

    size = spec.out_size
    frames = out.shape[1]
    if frames > size:
        out = out[:, :size]
    elif frames < size:
        floor = out.min() if spec.power_to_db else torch.zeros((), dtype=out.dtype)
        pad = torch.full((out.shape[0], size - frames), float(floor), dtype=out.dtype)
        out = torch.cat([out, pad], dim=1)
    return out.unsqueeze(0)


# ---------------------------------------------------------------------------
# Sensor windows -> spectrogram stacks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SensorWindowSpec:
    """10-second 52-channel windows at 100 Hz mapped to a [52, 32, 32] stack."""

    window_seconds: float = 10.0
    sample_rate: int = 100
    channels: int = 52
    fft_bins: int = 63
    hop: int = 32
    power: int = 2
    log_offset: float = 1e-6

    @property
    def window_samples(self) -> int:
        return int(round(self.window_seconds * self.sample_rate))


def interpolate_missing(recording: np.ndarray) -> np.ndarray:
    """Linearly interpolate NaN gaps per channel (e.g. the ~9 Hz heart-rate
    channel up-sampled to the common 100 Hz grid); edges extend the nearest
    valid sample. All-NaN channels become zeros."""
    out = np.array(recording, dtype=np.float64, copy=True)
    t = np.arange(out.shape[1])
    for c in range(out.shape[0]):
        row = out[c]
        missing = np.isnan(row)
        if not missing.any():
            continue
        valid = ~missing
        if not valid.any():
            out[c] = 0.0
            continue
        out[c, missing] = np.interp(t[missing], t[valid], row[valid])
    return out


def sensor_window_to_spectrograms(
    recording: np.ndarray, t_start: int, spec: SensorWindowSpec
) -> torch.Tensor:
    """[C, 32, 32] log-power spectrogram stack for one window of a recording.

    ``recording`` is channels x time and may contain NaN gaps; no mel
    scaling is applied. Values are log(power + log_offset), so the floor is
    log(log_offset) for silent channels.
    """
    recording = np.asarray(recording)
    if recording.ndim != 2 or recording.shape[0] != spec.channels:
        raise ShapeMismatch(
            f"expected {spec.channels} x T recording, got shape {recording.shape}"
        )
    length = spec.window_samples
    if t_start < 0 or t_start + length > recording.shape[1]:
        raise WindowOutOfBounds(
            f"window [{t_start}, {t_start + length}) outside recording of "
            f"length {recording.shape[1]}"
        )
    window_data = recording[:, t_start : t_start + length]
    if np.isnan(window_data).any():
        window_data = interpolate_missing(window_data)
    signal = torch.from_numpy(np.ascontiguousarray(window_data)).float()

    window = torch.hann_window(spec.fft_bins, dtype=signal.dtype)
    stft = torch.stft(
        signal,
        n_fft=spec.fft_bins,
        hop_length=spec.hop,
        win_length=spec.fft_bins,
        window=window,
        center=True,
        return_complex=True,
    )
    power = stft.abs() ** spec.power
    return torch.log(power + spec.log_offset)


# ---------------------------------------------------------------------------
# Corners dataset
# ---------------------------------------------------------------------------


def make_corners_dataset(
    images: torch.Tensor,
    generator: torch.Generator,
    sampler=None,
) -> torch.Tensor:
    """Replace each quadrant of every image with the same-position quadrant
    of an independently sampled different training image.

    ``sampler(index, count, quadrant, generator) -> donor index`` may be
    injected (tests use a degenerate self-sampler); the default samples
    uniformly and never picks the image itself.
    """
    if images.dim() != 4:
        raise ShapeMismatch(f"expected N x C x H x W images, got shape {tuple(images.shape)}")
    n = images.shape[0]
    if n < 5:
        raise DatasetTooSmall(f"corners construction needs >= 5 images, got {n}")

    if sampler is None:
        def sampler(index, count, quadrant, gen):
            donor = int(torch.randint(0, count - 1, (), generator=gen).item())
            return donor + 1 if donor >= index else donor

    h2 = images.shape[2] // 2
    w2 = images.shape[3] // 2
    quadrants = [
        (slice(0, h2), slice(0, w2)),
        (slice(0, h2), slice(w2, None)),
        (slice(h2, None), slice(0, w2)),
        (slice(h2, None), slice(w2, None)),
    ]
    out = images.clone()
    for i in range(n):
        for q, (rows, cols) in enumerate(quadrants):
            donor = sampler(i, n, q, generator)
            out[i, :, rows, cols] = images[donor, :, rows, cols]
    return out


def audit_corners(derived: torch.Tensor, source: torch.Tensor) -> dict:
    """Provenance audit: how many quadrants trace bit-exactly to some source
    image, and how many to the original image at the same index."""
    if derived.shape != source.shape:
        raise ShapeMismatch("derived and source sets must have identical shapes")
    h2 = source.shape[2] // 2
    w2 = source.shape[3] // 2
    quadrants = [
        (slice(0, h2), slice(0, w2)),
        (slice(0, h2), slice(w2, None)),
        (slice(h2, None), slice(0, w2)),
        (slice(h2, None), slice(w2, None)),
    ]
    lookup = []
    for rows, cols in quadrants:
        table: dict[bytes, list[int]] = {}
        for j in range(source.shape[0]):
            key = source[j, :, rows, cols].numpy().tobytes()
            table.setdefault(key, []).append(j)
        lookup.append(table)

    total = traced = self_traced = 0
    for i in range(derived.shape[0]):
        for q, (rows, cols) in enumerate(quadrants):
            total += 1
            key = derived[i, :, rows, cols].numpy().tobytes()
            owners = lookup[q].get(key)
            if owners:
                traced += 1
                if i in owners:
                    self_traced += 1
    return {"total": total, "traced": traced, "self_traced": self_traced}


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    label: int | str | None = None
    split: str = "train"
    subject_id: str | None = None


def read_manifest(path) -> list[ManifestRecord]:
    path = Path(path)
    if not path.exists():
        raise IOFailure(f"manifest not found: {path}")
    records = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        raw = json.loads(line)
        records.append(
            ManifestRecord(
                path=raw["path"],
                label=raw.get("label"),
                split=raw.get("split", "train"),
                subject_id=raw.get("subject_id"),
            )
        )
    return records


def write_manifest(records, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for rec in records:
            fh.write(json.dumps({k: v for k, v in asdict(rec).items() if v is not None}) + "\n")


# ---------------------------------------------------------------------------
# Adapters: synthetic data, images, CIFAR-10 batches, wav, Pamap2
# ---------------------------------------------------------------------------


def synthetic_images(
    size: int, channels: int = 3, height: int = 32, width: int = 32, seed: int = 0
) -> torch.Tensor:
    """Smooth seeded random images in [0, 1] for desk-scale runs."""
    gen = torch.Generator().manual_seed(seed)
    coarse = torch.rand(size, channels, max(2, height // 8), max(2, width // 8), generator=gen)
    images = torch.nn.functional.interpolate(
        coarse, size=(height, width), mode="bilinear", align_corners=False
    )
    images = images + 0.08 * torch.randn(images.shape, generator=gen)
    return images.clamp(0.0, 1.0)


def synthetic_blobs(
    size: int,
    channels: int = 3,
    height: int = 32,
    width: int = 32,
    seed: int = 0,
    class_means: tuple[float, float] = (0.3, 0.7),
    sigma: float = 0.08,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Two-class labeled images whose class means sit 5 sigma apart in pixel
    intensity; frozen-encoder features of these are linearly separable."""
    gen = torch.Generator().manual_seed(seed)
    labels = torch.randint(0, 2, (size,), generator=gen)
    means = torch.tensor(class_means)[labels].reshape(size, 1, 1, 1)
    x = means + sigma * torch.randn(size, channels, height, width, generator=gen)
    return x.clamp(0.0, 1.0), labels


def load_image(path) -> torch.Tensor:
    from PIL import Image

    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1)


def load_image_manifest(manifest_path, split: str | None = None, root=None):
    """Stack images (and labels when present) listed in a manifest."""
    records = [
        r for r in read_manifest(manifest_path) if split is None or r.split == split
    ]
    if not records:
        raise EmptyInput(f"no records for split {split!r} in {manifest_path}")
    root = Path(root) if root is not None else Path(manifest_path).parent
    images = torch.stack([load_image(root / r.path) for r in records])
    labels = None
    if all(r.label is not None for r in records):
        labels = torch.tensor([int(r.label) for r in records])
    return images, labels


def load_cifar10_batches(directory) -> dict:
    """Read the standard CIFAR-10 python pickle batches from a directory."""
    directory = Path(directory)
    if not directory.exists():
        raise IOFailure(f"CIFAR-10 directory not found: {directory}")

    def read_batch(name):
        with (directory / name).open("rb") as fh:
            raw = pickle.load(fh, encoding="bytes")
        data = torch.from_numpy(
            raw[b"data"].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
        )
        labels = torch.tensor(raw[b"labels"], dtype=torch.long)
        return data, labels

    train_parts = [read_batch(f"data_batch_{i}") for i in range(1, 6)]
    test_x, test_y = read_batch("test_batch")
    return {
        "train_x": torch.cat([p[0] for p in train_parts]),
        "train_y": torch.cat([p[1] for p in train_parts]),
        "test_x": test_x,
        "test_y": test_y,
    }


def load_wav(path) -> torch.Tensor:
    """16-bit PCM wav file as a float waveform in [-1, 1] (first channel)."""
    with wave.open(str(path), "rb") as fh:
        frames = fh.readframes(fh.getnframes())
        channels = fh.getnchannels()
        width = fh.getsampwidth()
    if width != 2:
        raise IOFailure(f"only 16-bit PCM wav supported, got sample width {width}")
    data = np.frombuffer(frames, dtype="<i2").astype(np.float32) / 32768.0
    if channels > 1:
        data = data.reshape(-1, channels)[:, 0]
    return torch.from_numpy(data.copy())


@dataclass(frozen=True)
class DatasetConfig:
    """Declarative pointer at a dataset: a synthetic generator, a manifest of
    raw files, CIFAR-10 pickle batches, or a Pamap2 recording directory.

    ``size``/``val_size``/``num_subjects`` drive the synthetic kinds;
    ``limit`` optionally truncates file-backed datasets. Relative paths are
    resolved against VIEWCRAFT_DATA_DIR by the config loader.
    """

    kind: str = "synthetic_images"
    path: str | None = None
    split: str = "train"
    val_split: str = "test"
    size: int = 512
    val_size: int | None = None
    limit: int | None = None
    channels: int = 3
    height: int = 32
    width: int = 32
    seed: int = 0
    num_subjects: int = 7
    train_subjects: tuple[str, ...] | None = None
    val_subjects: tuple[str, ...] | None = None
    spectrogram: SpectrogramSpec | None = None
    sensor: SensorWindowSpec | None = None


def _limited(x, limit):
    return x if limit is None else x[:limit]


def load_pretrain_data(config: DatasetConfig):
    """Unlabeled pretraining inputs: an N x C x H x W tensor, or a list of
    raw waveforms for time-domain expert runs."""
    if config.kind == "synthetic_images":
        return synthetic_images(
            config.size, config.channels, config.height, config.width, config.seed
        )
    if config.kind == "synthetic_blobs":
        return synthetic_blobs(
            config.size, config.channels, config.height, config.width, config.seed
        )[0]
    if config.kind == "image_manifest":
        return _limited(load_image_manifest(config.path, split=config.split)[0], config.limit)
    if config.kind == "cifar10":
        batches = load_cifar10_batches(config.path)
        key = "train_x" if config.split == "train" else "test_x"
        return _limited(batches[key], config.limit)
    if config.kind == "audio_manifest":
        records = [r for r in read_manifest(config.path) if r.split == config.split]
        root = Path(config.path).parent
        return [load_wav(root / r.path) for r in _limited(records, config.limit)]
    if config.kind == "pamap2":
        x, _, _ = load_pamap2_windows(
            config.path, config.sensor or SensorWindowSpec(),
            subjects=config.train_subjects, limit=config.limit,
        )
        return x
    raise ConfigInvalid(f"unsupported pretraining dataset kind {config.kind!r}")


def _audio_split(config: DatasetConfig, split: str):
    records = [r for r in read_manifest(config.path) if r.split == split]
    if not records:
        raise EmptyInput(f"no records for split {split!r} in {config.path}")
    root = Path(config.path).parent
    spec = config.spectrogram or SPEECH_64
    x = torch.stack(
        [waveform_to_logmel(load_wav(root / r.path), spec, mode="eval") for r in records]
    )
    y = torch.tensor([int(r.label) for r in records])
    return x, y


def load_labeled_splits(config: DatasetConfig):
    """((train_x, train_y), (val_x, val_y)) for transfer evaluation.

    Spectrogram-backed kinds are standardized here with the training split's
    stats; image kinds are returned raw in [0, 1] (the caller normalizes
    after applying views, mirroring pretraining).
    """
    if config.kind == "synthetic_blobs":
        val_size = config.val_size or max(2, config.size // 2)
        train = synthetic_blobs(
            config.size, config.channels, config.height, config.width, config.seed
        )
        val = synthetic_blobs(
            val_size, config.channels, config.height, config.width, config.seed + 1
        )
        return train, val
    if config.kind == "image_manifest":
        train = load_image_manifest(config.path, split=config.split)
        val = load_image_manifest(config.path, split=config.val_split)
        if train[1] is None or val[1] is None:
            raise ConfigInvalid(f"manifest {config.path} lacks labels for transfer")
        return (
            (_limited(train[0], config.limit), _limited(train[1], config.limit)),
            (val[0], val[1]),
        )
    if config.kind == "cifar10":
        batches = load_cifar10_batches(config.path)
        return (
            (_limited(batches["train_x"], config.limit), _limited(batches["train_y"], config.limit)),
            (batches["test_x"], batches["test_y"]),
        )
    if config.kind == "audio_manifest":
        train_x, train_y = _audio_split(config, config.split)
        val_x, val_y = _audio_split(config, config.val_split)
        stats = compute_norm_stats(train_x)
        return (normalize(train_x, stats), train_y), (normalize(val_x, stats), val_y)
    if config.kind == "pamap2":
        x, y, subjects = load_subject_data(config)
        train_subjects, val_subjects = _pamap2_splits(config, subjects)
        train_mask = torch.tensor([s in train_subjects for s in subjects])
        val_mask = torch.tensor([s in val_subjects for s in subjects])
        stats = compute_norm_stats(x[train_mask])
        return (
            (normalize(x[train_mask], stats), y[train_mask]),
            (normalize(x[val_mask], stats), y[val_mask]),
        )
    raise ConfigInvalid(f"unsupported labeled dataset kind {config.kind!r}")


def _pamap2_splits(config: DatasetConfig, subjects):
    unique = sorted(set(subjects))
    if len(unique) < 2:
        raise DatasetTooSmall("pamap2 splits need at least two subjects")
    train = config.train_subjects or tuple(unique[:-1])
    val = config.val_subjects or (unique[-1],)
    return set(train), set(val)


def load_subject_data(config: DatasetConfig):
    """(inputs, labels, subject_ids) for subject-aware protocols."""
    if config.kind == "synthetic_subjects":
        x, y = synthetic_blobs(
            config.size, config.channels, config.height, config.width, config.seed
        )
        subjects = [f"subject{i % config.num_subjects + 1}" for i in range(config.size)]
        return x, y, subjects
    if config.kind == "pamap2":
        spec = config.sensor or SensorWindowSpec()
        return load_pamap2_windows(config.path, spec, limit=config.limit)
    raise ConfigInvalid(f"unsupported subject dataset kind {config.kind!r}")


# Pamap2 .dat layout: timestamp, activity id, heart rate, then 3 IMUs x 17
# columns; dropping timestamp and activity leaves the 52 sensor channels.
PAMAP2_CHANNELS = 52


def load_pamap2_file(path):
    """(channels, activity_ids) arrays for one subject recording."""
    raw = np.loadtxt(path)
    if raw.ndim != 2 or raw.shape[1] != PAMAP2_CHANNELS + 2:
        raise IOFailure(
            f"{path}: expected {PAMAP2_CHANNELS + 2} columns, got "
            f"{raw.shape[1] if raw.ndim == 2 else 'non-tabular data'}"
        )
    activities = raw[:, 1].astype(np.int64)
    channels = raw[:, 2:].T  # (52, T), NaN marks missing samples
    return channels, activities


def activity_segments(activities: np.ndarray) -> list[tuple[int, int, int]]:
    """Contiguous (activity, start, end) runs; windows are sampled strictly
    inside one run so they never straddle an activity boundary."""
    segments = []
    start = 0
    for t in range(1, len(activities) + 1):
        if t == len(activities) or activities[t] != activities[start]:
            segments.append((int(activities[start]), start, t))
            start = t
    return segments


# Activity id 0 marks transient/unlabeled periods in Pamap2.
PAMAP2_TRANSIENT = 0


def load_pamap2_windows(
    directory,
    spec: SensorWindowSpec,
    subjects: tuple[str, ...] | None = None,
    limit: int | None = None,
):
    """Non-overlapping windows from every (subject, activity) segment of the
    .dat recordings in a directory, as ([N, 52, 32, 32], labels, subject_ids).
    Subject ids are the file stems (e.g. ``subject101``)."""
    directory = Path(directory)
    files = sorted(directory.glob("*.dat"))
    if not files:
        raise IOFailure(f"no Pamap2 .dat files under {directory}")
    stacks, labels, subject_ids = [], [], []
    window = spec.window_samples
    for path in files:
        subject = path.stem
        if subjects is not None and subject not in subjects:
            continue
        channels, activities = load_pamap2_file(path)
        channels = interpolate_missing(channels)
        for activity, start, end in activity_segments(activities):
            if activity == PAMAP2_TRANSIENT:
                continue
            for t in range(start, end - window + 1, window):
                stacks.append(sensor_window_to_spectrograms(channels, t, spec))
                labels.append(activity)
                subject_ids.append(subject)
                if limit is not None and len(stacks) >= limit:
                    break
            if limit is not None and len(stacks) >= limit:
                break
    if not stacks:
        raise EmptyInput(f"no complete windows found under {directory}")
    # Remap raw activity ids onto a dense [0, K) label range.
    unique = sorted(set(labels))
    remap = {a: i for i, a in enumerate(unique)}
    y = torch.tensor([remap[a] for a in labels])
    return torch.stack(stacks), y, subject_ids


# ---------------------------------------------------------------------------
# Spectrogram cache
# ---------------------------------------------------------------------------


def cache_key(file_path, spec) -> str:
    """Content hash of (file bytes, spec) for cache addressing."""
    h = hashlib.sha256()
    h.update(Path(file_path).read_bytes())
    h.update(repr(sorted(asdict(spec).items())).encode())
    return h.hexdigest()


def cached_spectrogram(cache_dir, file_path, spec, compute) -> torch.Tensor:
    """Load a cached spectrogram or compute and store it."""
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    entry = cache_dir / f"{cache_key(file_path, spec)}.pt"
    if entry.exists():
        payload = torch.load(entry, weights_only=False)
        return payload["spectrogram"]
    tensor = compute()
    torch.save(
        {"spectrogram": tensor, "source": str(file_path), "spec": asdict(spec)}, entry
    )
    return tensor
