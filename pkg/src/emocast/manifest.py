"""The annotated talking-clip data model: records, manifests, array storage,
and the pluggable filtering/annotation stages.

Manifests serialize as JSON-Lines with one record per line and an exact
field set; frame/audio arrays use a small self-describing binary format
(magic "ETTD") so clips can live on disk or in memory behind one interface.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Optional

import numpy as np

EMOTIONS = (
    "neutral",
    "angry",
    "contempt",
    "disgusted",
    "fear",
    "happy",
    "sad",
    "surprised",
)
SOURCE_TAGS = ("wild", "lab_emotional", "neutral_highsync")


class ManifestError(ValueError):
    pass


class AnnotationError(ValueError):
    pass


@dataclass(frozen=True)
class ClipRecord:
    clip_id: str
    identity_id: str
    source_tag: str
    emotion_label: str
    intensity: float
    text_prompt: str
    frame_count: int
    sync_score: float
    frames_ref: str
    audio_ref: str

    def __post_init__(self):
        if self.source_tag not in SOURCE_TAGS:
            raise ManifestError(f"{self.clip_id}: unknown source_tag {self.source_tag!r}")
        if self.emotion_label not in EMOTIONS:
            raise ManifestError(f"{self.clip_id}: unknown emotion_label {self.emotion_label!r}")
        if not 0.0 <= self.intensity <= 1.0:
            raise ManifestError(f"{self.clip_id}: intensity {self.intensity} outside [0, 1]")
        if self.emotion_label == "neutral" and self.intensity != 0.0:
            raise ManifestError(f"{self.clip_id}: neutral clips must have intensity 0")
        if self.emotion_label != "neutral" and self.intensity <= 0.0:
            raise ManifestError(f"{self.clip_id}: emotional clips need intensity > 0")
        if self.frame_count < 1:
            raise ManifestError(f"{self.clip_id}: frame_count must be positive")


_FIELD_NAMES = tuple(f.name for f in fields(ClipRecord))


class Manifest:
    """Ordered clip records plus identity and (identity, emotion) indices."""

    def __init__(self, records: Iterable[ClipRecord]):
        self.records: list[ClipRecord] = list(records)
        seen = set()
        for r in self.records:
            if r.clip_id in seen:
                raise ManifestError(f"duplicate clip_id {r.clip_id!r}")
            seen.add(r.clip_id)
        self.by_identity: dict[str, list[ClipRecord]] = {}
        self.by_identity_emotion: dict[tuple[str, str], list[ClipRecord]] = {}
        for r in self.records:
            self.by_identity.setdefault(r.identity_id, []).append(r)
            self.by_identity_emotion.setdefault((r.identity_id, r.emotion_label), []).append(r)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def identities(self) -> list[str]:
        return sorted(self.by_identity)

    @property
    def emotions_present(self) -> list[str]:
        return sorted({r.emotion_label for r in self.records})

    def restrict_tags(self, tags) -> "Manifest":
        tags = set(tags)
        return Manifest([r for r in self.records if r.source_tag in tags])

    def neutral_clips(self, identity: str) -> list[ClipRecord]:
        return self.by_identity_emotion.get((identity, "neutral"), [])

    def validate_for_emotion_aware_sampling(self) -> None:
        """Every identity with emotional clips must also offer a neutral clip."""
        for identity, recs in self.by_identity.items():
            if any(r.emotion_label != "neutral" for r in recs) and not self.neutral_clips(identity):
                raise ManifestError(f"identity {identity!r} has emotional clips but no neutral clip")


# ---------------------------------------------------------------------------
# JSON-Lines serialization
# ---------------------------------------------------------------------------


def record_to_json(record: ClipRecord) -> str:
    payload = {name: getattr(record, name) for name in _FIELD_NAMES}
    return json.dumps(payload, ensure_ascii=False, separators=(", ", ": "))


def record_from_json(line: str) -> ClipRecord:
    try:
        payload = json.loads(line)
    except json.JSONDecodeError as e:
        raise ManifestError(f"bad manifest line: {e}") from None
    if not isinstance(payload, dict):
        raise ManifestError("manifest line is not an object")
    unknown = set(payload) - set(_FIELD_NAMES)
    if unknown:
        raise ManifestError(f"unknown manifest fields: {sorted(unknown)}")
    missing = set(_FIELD_NAMES) - set(payload)
    if missing:
        raise ManifestError(f"missing manifest fields: {sorted(missing)}")
    return ClipRecord(
        clip_id=str(payload["clip_id"]),
        identity_id=str(payload["identity_id"]),
        source_tag=str(payload["source_tag"]),
        emotion_label=str(payload["emotion_label"]),
        intensity=float(payload["intensity"]),
        text_prompt=str(payload["text_prompt"]),
        frame_count=int(payload["frame_count"]),
        sync_score=float(payload["sync_score"]),
        frames_ref=str(payload["frames_ref"]),
        audio_ref=str(payload["audio_ref"]),
    )


def save_manifest(manifest: Manifest, path) -> None:
    text = "".join(record_to_json(r) + "\n" for r in manifest.records)
    Path(path).write_text(text, encoding="utf-8")


def load_manifest(path) -> Manifest:
    records = []
    for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
        if not line.strip():
            continue
        try:
            records.append(record_from_json(line))
        except ManifestError as e:
            raise ManifestError(f"line {i + 1}: {e}") from None
    return Manifest(records)


# ---------------------------------------------------------------------------
# Binary array storage (magic "ETTD")
# ---------------------------------------------------------------------------

_ARRAY_MAGIC = b"ETTD"
_ARRAY_VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def encode_array(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    if arr.dtype not in _DTYPE_CODES:
        raise ValueError(f"unsupported array dtype {arr.dtype}")
    head = _ARRAY_MAGIC + struct.pack("<II", _ARRAY_VERSION, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    head += struct.pack("<B", _DTYPE_CODES[arr.dtype])
    return head + arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()


def decode_array(blob: bytes) -> np.ndarray:
    if blob[:4] != _ARRAY_MAGIC:
        raise ValueError("not an ETTD array (bad magic)")
    version, rank = struct.unpack_from("<II", blob, 4)
    if version != _ARRAY_VERSION:
        raise ValueError(f"unsupported ETTD version {version}")
    dims = struct.unpack_from(f"<{rank}I", blob, 12)
    (code,) = struct.unpack_from("<B", blob, 12 + 4 * rank)
    dtype = _CODE_DTYPES.get(code)
    if dtype is None:
        raise ValueError(f"unknown dtype code {code}")
    offset = 13 + 4 * rank
    count = int(np.prod(dims)) if rank else 1
    expected = offset + count * dtype.itemsize
    if len(blob) != expected:
        raise ValueError(f"truncated ETTD array: {len(blob)} bytes, expected {expected}")
    return np.frombuffer(blob[offset:], dtype=dtype.newbyteorder("<")).astype(dtype).reshape(dims)


def write_array(path, arr: np.ndarray) -> None:
    Path(path).write_bytes(encode_array(arr))


def read_array(path) -> np.ndarray:
    return decode_array(Path(path).read_bytes())


class ArrayStore:
    """Clip arrays keyed by storage reference; in memory, optionally synced
    to a directory of ETTD files."""

    def __init__(self, arrays: Optional[dict[str, np.ndarray]] = None, root: Optional[Path] = None):
        self._arrays = dict(arrays or {})
        self.root = Path(root) if root is not None else None

    def put(self, ref: str, arr: np.ndarray) -> None:
        self._arrays[ref] = arr

    def get(self, ref: str) -> np.ndarray:
        if ref in self._arrays:
            return self._arrays[ref]
        if self.root is not None:
            arr = read_array(self.root / ref)
            self._arrays[ref] = arr
            return arr
        raise KeyError(f"no array stored under {ref!r}")

    def refs(self) -> list[str]:
        return sorted(self._arrays)

    def save(self, root) -> None:
        root = Path(root)
        for ref, arr in self._arrays.items():
            target = root / ref
            target.parent.mkdir(parents=True, exist_ok=True)
            write_array(target, arr)

    @classmethod
    def open(cls, root) -> "ArrayStore":
        return cls(root=root)

    def frames(self, record: ClipRecord) -> np.ndarray:
        return self.get(record.frames_ref)

    def audio(self, record: ClipRecord) -> np.ndarray:
        return self.get(record.audio_ref)


# ---------------------------------------------------------------------------
# Pipeline stages
# ---------------------------------------------------------------------------


def lip_sync_filter(manifest: Manifest, scorer: Callable[[ClipRecord], float], threshold: float) -> Manifest:
    """Keep records whose score reaches the threshold, preserving order."""
    return Manifest([r for r in manifest.records if scorer(r) >= threshold])


def recorded_sync_scorer(record: ClipRecord) -> float:
    """The synthetic stand-in for an audio-visual sync model: the generator's
    stored energy/openness correlation."""
    return record.sync_score


@dataclass
class SyntheticAnnotator:
    """Emits a templated emotive prompt from the clip's known labels."""

    sources: tuple = SOURCE_TAGS

    def __call__(self, record: ClipRecord) -> ClipRecord:
        if record.source_tag not in self.sources:
            raise AnnotationError(f"annotator does not handle source {record.source_tag!r}")
        prompt = f"a face with {record.emotion_label} expression, intensity {record.intensity:.2f}"
        return replace(record, text_prompt=prompt)


def annotate(record: ClipRecord, annotator: Callable[[ClipRecord], ClipRecord]) -> ClipRecord:
    out = annotator(record)
    if not out.text_prompt:
        raise AnnotationError(f"annotator left {record.clip_id} without a prompt")
    return out
