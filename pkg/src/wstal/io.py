"""Binary feature files and line-delimited manifest / ground-truth / proposal files.

Feature file layout (all little-endian):
    bytes 0-3   magic "WSTF"
    bytes 4-5   u16 version (currently 1)
    bytes 6-9   u32 number of segments T0
    bytes 10-13 u32 feature width D
    bytes 14-   T0 * D float32 values, row-major

Manifests and ground-truth files are JSON lines, one record per line.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"WSTF"
VERSION = 1
_HEADER = struct.Struct("<4sHII")


class FeatureFileError(Exception):
    """Raised when a feature file is malformed or truncated."""


class ManifestError(Exception):
    """Raised when a manifest or ground-truth file cannot be loaded."""


def write_features(path: str | Path, features: np.ndarray) -> None:
    """Write a (T0, D) float matrix in the binary feature format."""
    arr = np.ascontiguousarray(features, dtype="<f4")
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"features must be a non-empty 2-D matrix, got shape {arr.shape}")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, arr.shape[0], arr.shape[1]))
        f.write(arr.tobytes())


def read_features(path: str | Path) -> np.ndarray:
    """Read a feature file back into a (T0, D) float32 matrix."""
    with open(path, "rb") as f:
        header = f.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise FeatureFileError(
                f"{path}: truncated header, got {len(header)} bytes at offset 0"
            )
        magic, version, t0, d = _HEADER.unpack(header)
        if magic != MAGIC:
            raise FeatureFileError(f"{path}: bad magic {magic!r} at offset 0")
        if version != VERSION:
            raise FeatureFileError(f"{path}: unsupported version {version} at offset 4")
        payload = f.read(t0 * d * 4)
        if len(payload) < t0 * d * 4:
            raise FeatureFileError(
                f"{path}: truncated payload, expected {t0 * d * 4} bytes, "
                f"got {len(payload)} at offset {_HEADER.size}"
            )
    return np.frombuffer(payload, dtype="<f4").reshape(t0, d).copy()


def write_manifest(path: str | Path, entries: list[dict]) -> None:
    """Write manifest entries (id, feature_path, duration_sec, labels) as JSON lines."""
    with open(path, "w") as f:
        for entry in entries:
            f.write(json.dumps(entry) + "\n")


def read_manifest(path: str | Path) -> list[dict]:
    """Read manifest entries; feature paths are returned as written (resolve at load)."""
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    entries = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            for key in ("id", "feature_path", "duration_sec", "labels"):
                if key not in record:
                    raise ManifestError(f"{path}:{lineno}: missing field '{key}'")
            entries.append(record)
    return entries


def write_ground_truth(path: str | Path, segments: list[dict]) -> None:
    """Write ground-truth segments (video_id, class_name, start_sec, end_sec)."""
    with open(path, "w") as f:
        for seg in segments:
            f.write(json.dumps(seg) + "\n")


def read_ground_truth(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"ground-truth file not found: {path}")
    segments = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            for key in ("video_id", "class_name", "start_sec", "end_sec"):
                if key not in record:
                    raise ManifestError(f"{path}:{lineno}: missing field '{key}'")
            segments.append(record)
    return segments


def write_proposals(path: str | Path, proposals: list[dict]) -> None:
    """Write proposal records (video_id, class_name, start_sec, end_sec, confidence)."""
    with open(path, "w") as f:
        for prop in proposals:
            f.write(json.dumps(prop) + "\n")


def read_proposals(path: str | Path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def resolve_path(base: str | Path, relative: str) -> Path:
    """Resolve a manifest-relative path against the manifest's directory."""
    rel = Path(relative)
    if rel.is_absolute():
        return rel
    return Path(os.path.dirname(os.path.abspath(base))) / rel
