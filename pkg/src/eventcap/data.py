"""Datasets: synthetic generation with exact ground truth, file ingestion, and
the fixed-length temporal resize.

Synthetic videos are Gaussian noise with a distinct class-specific unit
direction added over each event span; the caption is a fixed "<verb> the
<noun>" template per class, so concept labels and localization targets are
known exactly. Everything is driven by one seeded generator, making dataset
files byte-identical across runs.

File formats (documented for drop-in real data):
  annotations  JSON: {video_id: {"duration": s, "timestamps": [[s,e],...],
               "sentences": [...]}}, mirroring the public ActivityNet-Captions
               layout.
  features     binary: magic b"EVF1", little-endian uint32 pair (F_raw, D_in),
               then row-major float32 values.
  manifest     JSON listing split membership, feature dim, and file layout.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import ConfigError, DataError
from .temporal import make_segment

_MAGIC = b"EVF1"

DEFAULT_VERBS = ("add", "chop", "cook", "mix", "pour", "wash")
DEFAULT_NOUNS = ("bowl", "egg", "oil", "onion", "pan", "salt")


@dataclass
class Event:
    start_s: float
    end_s: float
    caption: str

    def segment(self):
        return make_segment(self.start_s, self.end_s)


@dataclass
class VideoRecord:
    """One video: id, duration, ground-truth events, optional features."""

    video_id: str
    duration_s: float
    events: List[Event]
    features: Optional[np.ndarray] = None

    def captions(self) -> List[str]:
        return [e.caption for e in self.events]

    def segments_seconds(self) -> np.ndarray:
        if not self.events:
            return np.zeros((0, 2), dtype=np.float64)
        return np.array([[e.start_s, e.end_s] for e in self.events], dtype=np.float64)

    def normalized_segments(self) -> np.ndarray:
        """Event segments divided by the true duration, in [0, 1]."""
        if self.duration_s <= 0:
            raise DataError(f"{self.video_id}: nonpositive duration {self.duration_s}")
        return np.clip(self.segments_seconds() / self.duration_s, 0.0, 1.0)

    def validate(self, require_events: bool = True) -> List[str]:
        problems = []
        if self.duration_s <= 0:
            problems.append(f"{self.video_id}: duration {self.duration_s} <= 0")
        if require_events and not self.events:
            problems.append(f"{self.video_id}: no events")
        for k, e in enumerate(self.events):
            tag = f"{self.video_id}[{k}]"
            if e.end_s < e.start_s:
                problems.append(f"{tag}: end {e.end_s} < start {e.start_s}")
            if e.start_s < 0 or e.end_s > self.duration_s:
                problems.append(
                    f"{tag}: span [{e.start_s}, {e.end_s}] outside [0, {self.duration_s}]"
                )
            if not e.caption or not e.caption.strip():
                problems.append(f"{tag}: empty caption")
        return problems


@dataclass(frozen=True)
class SynthParams:
    """Generator knobs. pattern_strength > noise_sigma keeps classes separable."""

    n_videos: int = 120
    val_fraction: float = 1.0 / 6.0
    frames_range: tuple = (160, 200)
    events_range: tuple = (3, 5)
    event_len_range: tuple = (10, 40)
    d_in: int = 128
    pattern_strength: float = 1.0
    noise_sigma: float = 0.1
    verbs: tuple = DEFAULT_VERBS
    nouns: tuple = DEFAULT_NOUNS
    max_events: int = 10
    overlap_stress: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_videos < 2:
            raise ConfigError("need at least 2 videos for a split")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in (0, 1)")
        for name in ("frames_range", "events_range", "event_len_range"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 1:
                raise ConfigError(f"{name} must satisfy 1 <= lo <= hi, got ({lo}, {hi})")
        if self.events_range[1] > self.max_events:
            raise ConfigError(
                f"events_range max {self.events_range[1]} exceeds cap {self.max_events}"
            )
        if self.pattern_strength <= self.noise_sigma:
            raise ConfigError("pattern_strength must exceed noise_sigma")
        if self.d_in < 1:
            raise ConfigError("d_in must be positive")
        if not self.verbs or not self.nouns:
            raise ConfigError("template vocabulary must be nonempty")
        # Reject guaranteed-infeasible packing up front: even the shortest
        # events with unit gaps cannot fit in the smallest frame budget.
        n, lo = self.events_range[1], self.event_len_range[0]
        if n * lo + (n - 1) + 2 > self.frames_range[0]:
            raise DataError(
                f"packing infeasible: {n} events of >= {lo} frames cannot fit "
                f"in {self.frames_range[0]} frames"
            )

    @property
    def n_val(self) -> int:
        return max(1, int(round(self.n_videos * self.val_fraction)))

    @property
    def concept_lexicon(self) -> tuple:
        return tuple(sorted(set(self.verbs) | set(self.nouns)))


@dataclass
class SynthDataset:
    train: List[VideoRecord]
    val: List[VideoRecord]
    params: SynthParams
    concept_lexicon: tuple = field(default_factory=tuple)

    def split(self, name: str) -> List[VideoRecord]:
        if name not in ("train", "val"):
            raise ValueError(f"unknown split {name!r}")
        return self.train if name == "train" else self.val


def _pack_spans(rng, n_frames: int, n_events: int, len_range) -> list:
    """Non-overlapping integer spans with >= 1 frame gaps and unit margins."""
    lo, hi = len_range
    lengths = None
    for _ in range(200):
        cand = rng.integers(lo, hi + 1, size=n_events)
        if int(cand.sum()) + (n_events - 1) + 2 <= n_frames:
            lengths = cand
            break
    if lengths is None:
        raise DataError(
            f"packing failed: {n_events} events of {lo}..{hi} frames in {n_frames}"
        )
    slack = n_frames - int(lengths.sum()) - (n_events - 1) - 2
    if slack > 0:
        cuts = np.sort(rng.integers(0, slack + 1, size=n_events))
        gaps = np.diff(np.concatenate([[0], cuts, [slack]]))
    else:
        gaps = np.zeros(n_events + 1, dtype=np.int64)
    spans = []
    t = 1 + int(gaps[0])
    for k in range(n_events):
        spans.append((t, t + int(lengths[k])))
        t += int(lengths[k]) + 1 + int(gaps[k + 1])
    return spans


def synth_generate(params: SynthParams) -> SynthDataset:
    """Deterministic synthetic dataset: noise + planted class directions.

    One video per second of cost: duration equals the frame count (1 fps), so
    annotation seconds line up with frame indices. Ground-truth spans never
    overlap unless overlap_stress adds one extra event straddling the first.
    """
    rng = np.random.default_rng(params.seed)
    classes = [(v, n) for v in params.verbs for n in params.nouns]
    dirs = rng.standard_normal((len(classes), params.d_in))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    records = []
    for vi in range(params.n_videos):
        n_frames = int(rng.integers(params.frames_range[0], params.frames_range[1] + 1))
        n_events = int(rng.integers(params.events_range[0], params.events_range[1] + 1))
        spans = _pack_spans(rng, n_frames, n_events, params.event_len_range)
        feats = rng.standard_normal((n_frames, params.d_in)) * params.noise_sigma
        events = []
        for s, e in spans:
            cid = int(rng.integers(0, len(classes)))
            feats[s:e] += params.pattern_strength * dirs[cid]
            verb, noun = classes[cid]
            events.append(Event(float(s), float(e), f"{verb} the {noun}"))
        if params.overlap_stress and events and n_events < params.max_events:
            base = events[0]
            length = base.end_s - base.start_s
            s2 = base.start_s + max(1.0, length / 2.0)
            e2 = min(float(n_frames), s2 + length)
            if e2 > s2:
                cid = int(rng.integers(0, len(classes)))
                feats[int(s2):int(e2)] += params.pattern_strength * dirs[cid]
                verb, noun = classes[cid]
                events.append(Event(s2, e2, f"{verb} the {noun}"))
        records.append(
            VideoRecord(
                video_id=f"synth_{vi:04d}",
                duration_s=float(n_frames),
                events=events,
                features=feats.astype(np.float32),
            )
        )

    n_val = params.n_val
    return SynthDataset(
        train=records[: params.n_videos - n_val],
        val=records[params.n_videos - n_val :],
        params=params,
        concept_lexicon=params.concept_lexicon,
    )


def resize_to_fixed_length(features: np.ndarray, n_fixed: int):
    """Uniform subsample or zero-pad to n_fixed frames.

    Returns (n_fixed x D matrix, pad mask) where pad_mask[t] is True for
    padded rows. Subsampling picks indices round(i * F_raw / F).
    """
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[0] == 0:
        raise DataError(f"features must be a nonempty 2-d matrix, got {features.shape}")
    if n_fixed < 1:
        raise ConfigError(f"target length must be >= 1, got {n_fixed}")
    f_raw = features.shape[0]
    pad_mask = np.zeros(n_fixed, dtype=bool)
    if f_raw == n_fixed:
        return features.copy(), pad_mask
    if f_raw > n_fixed:
        idx = np.minimum(
            np.round(np.arange(n_fixed) * (f_raw / n_fixed)).astype(np.int64), f_raw - 1
        )
        return features[idx], pad_mask
    out = np.zeros((n_fixed, features.shape[1]), dtype=features.dtype)
    out[:f_raw] = features
    pad_mask[f_raw:] = True
    return out, pad_mask


def save_features(path, features: np.ndarray) -> None:
    arr = np.ascontiguousarray(np.asarray(features, dtype=np.float32))
    if arr.ndim != 2:
        raise DataError(f"features must be 2-d, got shape {arr.shape}")
    header = np.array(arr.shape, dtype="<u4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(header)
        fh.write(arr.astype("<f4").tobytes())


def load_features(path, expected_dim: Optional[int] = None) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != _MAGIC:
        raise DataError(f"{path}: not a feature file (bad magic/header)")
    f_raw, d_in = np.frombuffer(blob[4:12], dtype="<u4")
    body = blob[12:]
    expected_bytes = int(f_raw) * int(d_in) * 4
    if len(body) != expected_bytes:
        raise DataError(
            f"{path}: truncated or oversized payload ({len(body)} bytes, "
            f"expected {expected_bytes})"
        )
    if expected_dim is not None and int(d_in) != expected_dim:
        raise DataError(f"{path}: feature dim {d_in} does not match configured {expected_dim}")
    return np.frombuffer(body, dtype="<f4").reshape(int(f_raw), int(d_in)).copy()


def write_annotations(path, records: List[VideoRecord]) -> None:
    doc = {
        r.video_id: {
            "duration": r.duration_s,
            "timestamps": [[e.start_s, e.end_s] for e in r.events],
            "sentences": [e.caption for e in r.events],
        }
        for r in records
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_annotations(path, require_events: bool = True):
    """Parse an annotation file into records plus a per-record error report.

    Schema violations (end < start, spans beyond duration, missing captions,
    mismatched list lengths) are collected, never raised; file-level problems
    (unreadable, not a JSON object) raise DataError.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc})") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise DataError(f"{path}: top level must be an object mapping video_id to fields")

    records, errors = [], []
    for vid in sorted(doc):
        entry = doc[vid]
        if not isinstance(entry, dict):
            errors.append(f"{vid}: entry is not an object")
            continue
        try:
            duration = float(entry["duration"])
            stamps = entry["timestamps"]
            sents = entry["sentences"]
        except (KeyError, TypeError, ValueError) as exc:
            errors.append(f"{vid}: missing or malformed field ({exc})")
            continue
        if len(stamps) != len(sents):
            errors.append(
                f"{vid}: {len(stamps)} timestamps vs {len(sents)} sentences"
            )
            continue
        events = []
        ok = True
        for k, (pair, sent) in enumerate(zip(stamps, sents)):
            try:
                s, e = float(pair[0]), float(pair[1])
            except (TypeError, ValueError, IndexError):
                errors.append(f"{vid}[{k}]: timestamp pair malformed: {pair!r}")
                ok = False
                continue
            events.append(Event(s, e, str(sent)))
        if not ok:
            continue
        rec = VideoRecord(video_id=vid, duration_s=duration, events=events)
        problems = rec.validate(require_events=require_events)
        if problems:
            errors.extend(problems)
            continue
        records.append(rec)
    return records, errors


def write_dataset(dataset: SynthDataset, out_dir, force: bool = False) -> None:
    """Persist manifest, per-split annotations, features, and the lexicon."""
    manifest_path = os.path.join(out_dir, "manifest.json")
    if os.path.exists(manifest_path) and not force:
        raise DataError(f"{out_dir}: dataset already present (use force to overwrite)")
    os.makedirs(os.path.join(out_dir, "features"), exist_ok=True)
    manifest = {
        "format": "eventcap-dataset-v1",
        "d_in": dataset.params.d_in,
        "fps": 1.0,
        "splits": {
            "train": [r.video_id for r in dataset.train],
            "val": [r.video_id for r in dataset.val],
        },
        "seed": dataset.params.seed,
    }
    for split in ("train", "val"):
        write_annotations(
            os.path.join(out_dir, f"{split}.json"), dataset.split(split)
        )
        for rec in dataset.split(split):
            if rec.features is None:
                raise DataError(f"{rec.video_id}: no features to write")
            save_features(
                os.path.join(out_dir, "features", rec.video_id + ".evf"), rec.features
            )
    with open(os.path.join(out_dir, "lexicon.txt"), "w", encoding="utf-8") as fh:
        for token in dataset.concept_lexicon:
            fh.write(token + "\n")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_dataset(root) -> SynthDataset:
    """Load a dataset directory written by write_dataset."""
    manifest_path = os.path.join(root, "manifest.json")
    try:
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise DataError(f"{root}: no readable manifest.json ({exc})") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{manifest_path}: invalid JSON ({exc})") from exc
    d_in = int(manifest.get("d_in", 0)) or None

    splits = {}
    for split in ("train", "val"):
        records, errors = load_annotations(os.path.join(root, f"{split}.json"))
        if errors:
            raise DataError(f"{root}/{split}.json: {len(errors)} bad records: {errors[:3]}")
        wanted = manifest.get("splits", {}).get(split)
        if wanted is not None:
            listed = set(wanted)
            records = [r for r in records if r.video_id in listed]
            missing = listed - {r.video_id for r in records}
            if missing:
                raise DataError(f"{root}: manifest lists absent videos: {sorted(missing)[:3]}")
        for rec in records:
            fpath = os.path.join(root, "features", rec.video_id + ".evf")
            rec.features = load_features(fpath, expected_dim=d_in)
        splits[split] = records

    overlap = {r.video_id for r in splits["train"]} & {r.video_id for r in splits["val"]}
    if overlap:
        raise DataError(f"{root}: train/val overlap: {sorted(overlap)[:3]}")

    lex_path = os.path.join(root, "lexicon.txt")
    lexicon = ()
    if os.path.exists(lex_path):
        with open(lex_path, encoding="utf-8") as fh:
            lexicon = tuple(line.strip() for line in fh if line.strip())
    else:
        warnings.warn(f"{root}: no lexicon.txt, concept building falls back to stopwords")

    params = SynthParams(
        n_videos=max(2, len(splits["train"]) + len(splits["val"])),
        d_in=d_in or 1,
        seed=int(manifest.get("seed", 0)),
    )
    return SynthDataset(
        train=splits["train"], val=splits["val"], params=params, concept_lexicon=lexicon
    )
