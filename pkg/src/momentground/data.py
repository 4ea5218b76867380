"""Dataset representation, synthetic generation, manifest I/O, and batching.

Samples carry precomputed clip-level video features and token-level text
features; ground truth is one or more normalized moment spans per sample.
The synthetic generator produces desk-scale datasets where each video
contains a handful of "events" with fixed signature vectors, so grounding
is learnable from scratch in minutes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .spans import MomentSpan


class ManifestError(Exception):
    """Raised when a dataset manifest line fails validation."""


@dataclass
class GroundingSample:
    id: str
    video_features: np.ndarray  # (L, d_v) float32
    text_features: np.ndarray  # (N, d_t) float32
    moments: list[MomentSpan]
    saliency: np.ndarray | None = None  # (L,) in [0, 1]

    def __post_init__(self):
        if self.video_features.ndim != 2 or self.video_features.shape[0] < 1:
            raise ValueError(f"sample {self.id}: video_features must be (L>=1, d_v)")
        if self.text_features.ndim != 2 or self.text_features.shape[0] < 1:
            raise ValueError(f"sample {self.id}: text_features must be (N>=1, d_t)")
        if not self.moments:
            raise ValueError(f"sample {self.id}: at least one ground-truth moment required")
        if self.saliency is not None and len(self.saliency) != self.video_features.shape[0]:
            raise ValueError(f"sample {self.id}: saliency length != number of clips")

    @property
    def num_clips(self) -> int:
        return self.video_features.shape[0]

    @property
    def num_tokens(self) -> int:
        return self.text_features.shape[0]


@dataclass
class Batch:
    """Padded tensors with validity masks; padding positions are zero-filled."""

    video: torch.Tensor  # (B, L_max, d_v)
    video_mask: torch.Tensor  # (B, L_max) bool, True at real positions
    text: torch.Tensor  # (B, N_max, d_t)
    text_mask: torch.Tensor  # (B, N_max) bool
    targets: list[list[MomentSpan]]
    saliency_labels: torch.Tensor  # (B, L_max), 0 at padding
    ids: list[str]

    @property
    def size(self) -> int:
        return self.video.shape[0]


@dataclass
class SynthConfig:
    num_samples: int = 600
    num_clips: int = 32
    d_v: int = 32
    d_t: int = 32
    vocab_size: int = 6
    max_events_per_video: int = 3
    noise_std: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("num_samples", "num_clips", "d_v", "d_t", "vocab_size", "max_events_per_video"):
            if getattr(self, name) < 1:
                raise ValueError(f"synthetic config: {name} must be positive")
        if self.noise_std < 0:
            raise ValueError("synthetic config: noise_std must be >= 0")


def clip_midpoints(num_clips: int) -> np.ndarray:
    """Normalized midpoint of each clip: (t + 0.5) / L."""
    return (np.arange(num_clips) + 0.5) / num_clips


def saliency_from_moments(moments: list[MomentSpan], num_clips: int) -> np.ndarray:
    """Binary span-membership labels at clip midpoints."""
    mids = clip_midpoints(num_clips)
    labels = np.zeros(num_clips, dtype=np.float32)
    for m in moments:
        start, end = m.interval()
        labels[(mids >= start) & (mids <= end)] = 1.0
    return labels


def _place_disjoint_spans(rng: np.random.Generator, count: int, max_tries: int = 30):
    """Place ``count`` non-overlapping spans; returns None when placement fails."""
    placed: list[tuple[float, float]] = []
    for _ in range(count):
        for _ in range(max_tries):
            width = rng.uniform(0.05, 0.6)
            center = rng.uniform(width / 2.0, 1.0 - width / 2.0)
            start, end = center - width / 2.0, center + width / 2.0
            if all(min(end, e) - max(start, s) <= 0.0 for s, e in placed):
                placed.append((start, end))
                break
        else:
            return None
    return [MomentSpan((s + e) / 2.0, e - s) for s, e in placed]


def generate_synthetic_dataset(cfg: SynthConfig) -> list[GroundingSample]:
    """Deterministic synthetic grounding dataset.

    Each event type has a unit-norm video signature and a text query
    signature drawn once from the master seed. A sample places 1..max_events
    disjoint event instances; clips whose midpoint falls inside an instance
    carry that instance's signature plus Gaussian noise, other clips carry
    pure noise. The query describes one placed event type, and every
    instance of that type is a ground-truth moment.
    """
    master = np.random.default_rng(cfg.seed)
    video_sigs = master.normal(size=(cfg.vocab_size, cfg.d_v))
    video_sigs /= np.linalg.norm(video_sigs, axis=1, keepdims=True)
    text_sigs = master.normal(size=(cfg.vocab_size, cfg.d_t))

    samples = []
    mids = clip_midpoints(cfg.num_clips)
    for idx in range(cfg.num_samples):
        rng = np.random.default_rng([cfg.seed, idx])  # per-sample stream
        num_events = int(rng.integers(1, cfg.max_events_per_video + 1))
        spans = _place_disjoint_spans(rng, num_events)
        while spans is None and num_events > 1:
            num_events -= 1
            spans = _place_disjoint_spans(rng, num_events)
        assert spans is not None  # a single span always fits

        event_types = rng.integers(0, cfg.vocab_size, size=num_events)
        query_type = int(event_types[rng.integers(num_events)])
        moments = [s for s, t in zip(spans, event_types) if t == query_type]

        video = rng.normal(0.0, cfg.noise_std, size=(cfg.num_clips, cfg.d_v))
        for span, etype in zip(spans, event_types):
            start, end = span.interval()
            inside = (mids >= start) & (mids <= end)
            video[inside] += video_sigs[etype]

        num_tokens = int(rng.integers(3, 9))
        text = text_sigs[query_type] + rng.normal(0.0, cfg.noise_std, size=(num_tokens, cfg.d_t))

        samples.append(
            GroundingSample(
                id=f"synth-{cfg.seed}-{idx:05d}",
                video_features=video.astype(np.float32),
                text_features=text.astype(np.float32),
                moments=moments,
                saliency=saliency_from_moments(moments, cfg.num_clips),
            )
        )
    return samples


def collate(samples: list[GroundingSample]) -> Batch:
    """Pad a list of samples to a batch with validity masks."""
    if not samples:
        raise ValueError("cannot collate an empty sample list")
    l_max = max(s.num_clips for s in samples)
    n_max = max(s.num_tokens for s in samples)
    d_v = samples[0].video_features.shape[1]
    d_t = samples[0].text_features.shape[1]

    video = torch.zeros(len(samples), l_max, d_v)
    video_mask = torch.zeros(len(samples), l_max, dtype=torch.bool)
    text = torch.zeros(len(samples), n_max, d_t)
    text_mask = torch.zeros(len(samples), n_max, dtype=torch.bool)
    saliency = torch.zeros(len(samples), l_max)

    for i, s in enumerate(samples):
        li, ni = s.num_clips, s.num_tokens
        video[i, :li] = torch.from_numpy(np.ascontiguousarray(s.video_features))
        video_mask[i, :li] = True
        text[i, :ni] = torch.from_numpy(np.ascontiguousarray(s.text_features))
        text_mask[i, :ni] = True
        labels = s.saliency
        if labels is None:
            labels = saliency_from_moments(s.moments, li)
        saliency[i, :li] = torch.from_numpy(np.asarray(labels, dtype=np.float32))

    return Batch(
        video=video,
        video_mask=video_mask,
        text=text,
        text_mask=text_mask,
        targets=[list(s.moments) for s in samples],
        saliency_labels=saliency,
        ids=[s.id for s in samples],
    )


def _features_from_entry(value, key: str, sample_id: str, base_dir: Path) -> np.ndarray:
    """Decode a feature field: nested array, or {path, rows, cols} binary sidecar."""
    if isinstance(value, dict):
        missing = {"path", "rows", "cols"} - set(value)
        if missing:
            raise ManifestError(f"sample {sample_id}: {key} sidecar missing {sorted(missing)}")
        raw = np.fromfile(base_dir / value["path"], dtype="<f4")
        expected = value["rows"] * value["cols"]
        if raw.size != expected:
            raise ManifestError(
                f"sample {sample_id}: {key} file holds {raw.size} floats, "
                f"expected {value['rows']}x{value['cols']}"
            )
        return raw.reshape(value["rows"], value["cols"])
    arr = np.asarray(value, dtype=np.float32)
    if arr.ndim != 2:
        raise ManifestError(f"sample {sample_id}: {key} must be a 2-D array")
    return arr


def load_manifest(path: str | Path) -> list[GroundingSample]:
    """Read a JSON Lines dataset manifest.

    Each line is an object with keys ``id``, ``video_features``,
    ``text_features``, ``moments`` and optional ``saliency``. Feature fields
    may instead be ``{path, rows, cols}`` descriptors pointing at
    little-endian float32 row-major flat files relative to the manifest.
    """
    path = Path(path)
    base_dir = path.parent
    samples = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {lineno}: invalid JSON ({exc})") from exc
            sample_id = obj.get("id", f"<line {lineno}>")
            for key in ("id", "video_features", "text_features", "moments"):
                if key not in obj:
                    raise ManifestError(f"line {lineno}: sample {sample_id} missing key '{key}'")
            video = _features_from_entry(obj["video_features"], "video_features", sample_id, base_dir)
            text = _features_from_entry(obj["text_features"], "text_features", sample_id, base_dir)
            try:
                moments = [MomentSpan(float(c), float(w)) for c, w in obj["moments"]]
                saliency = None
                if obj.get("saliency") is not None:
                    saliency = np.asarray(obj["saliency"], dtype=np.float32)
                sample = GroundingSample(
                    id=str(obj["id"]),
                    video_features=video.astype(np.float32),
                    text_features=text.astype(np.float32),
                    moments=moments,
                    saliency=saliency,
                )
            except (ValueError, TypeError) as exc:
                raise ManifestError(f"line {lineno}: sample {sample_id}: {exc}") from exc
            samples.append(sample)
    return samples


def save_manifest(samples: list[GroundingSample], path: str | Path, binary: bool = False) -> None:
    """Write samples as a JSON Lines manifest.

    With ``binary=True``, feature matrices are stored in a sidecar directory
    as little-endian float32 flat files and referenced by {path, rows, cols}.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sidecar_dir = path.with_suffix(".features")
    if binary:
        sidecar_dir.mkdir(exist_ok=True)

    def encode_features(arr: np.ndarray, name: str):
        if not binary:
            return [[float(x) for x in row] for row in arr]
        rel = f"{sidecar_dir.name}/{name}.bin"
        arr.astype("<f4").tofile(path.parent / rel)
        return {"path": rel, "rows": int(arr.shape[0]), "cols": int(arr.shape[1])}

    with open(path, "w") as fh:
        for s in samples:
            obj = {
                "id": s.id,
                "video_features": encode_features(s.video_features, f"{s.id}.video"),
                "text_features": encode_features(s.text_features, f"{s.id}.text"),
                "moments": [[m.center, m.width] for m in s.moments],
            }
            if s.saliency is not None:
                obj["saliency"] = [float(x) for x in s.saliency]
            fh.write(json.dumps(obj) + "\n")


def train_val_split(
    samples: list[GroundingSample], val_fraction: float
) -> tuple[list[GroundingSample], list[GroundingSample]]:
    """Deterministic tail split: last ceil(n * val_fraction) samples go to val."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must be in (0, 1)")
    n_val = max(1, math.ceil(len(samples) * val_fraction))
    if n_val >= len(samples):
        raise ValueError("val_fraction leaves no training samples")
    return samples[:-n_val], samples[-n_val:]


def all_ground_truth_spans(samples: list[GroundingSample]) -> list[MomentSpan]:
    return [m for s in samples for m in s.moments]
