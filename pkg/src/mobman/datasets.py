"""Bit-exact demonstration and array serialization.

Arrays go into "MBRT" blocks: magic, u32 version, u32 rank, u32 dims, then
row-major little-endian float32 payload. A demonstration is a directory with
a UTF-8 manifest plus one array block per field; a dataset is a directory of
demonstration directories.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ARRAY_MAGIC = b"MBRT"
ARRAY_VERSION = 1
MANIFEST_NAME = "manifest.txt"


class ArrayFormatError(ValueError):
    """Base class for array block format errors."""


class BadMagicError(ArrayFormatError):
    pass


class VersionMismatchError(ArrayFormatError):
    pass


class PayloadMismatchError(ArrayFormatError):
    pass


def write_array(arr: np.ndarray, path: str | Path) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    with open(path, "wb") as f:
        f.write(ARRAY_MAGIC)
        f.write(struct.pack("<II", ARRAY_VERSION, arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(arr.tobytes())


def read_array(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != ARRAY_MAGIC:
        raise BadMagicError(f"bad array magic in {path}")
    version, rank = struct.unpack("<II", data[4:12])
    if version != ARRAY_VERSION:
        raise VersionMismatchError(f"unsupported array version {version}")
    header_end = 12 + 4 * rank
    if len(data) < header_end:
        raise PayloadMismatchError("truncated dimension header")
    dims = struct.unpack(f"<{rank}I", data[12:header_end])
    count = int(np.prod(dims)) if rank else 1
    if len(data) - header_end != count * 4:
        raise PayloadMismatchError(
            f"payload length {len(data) - header_end} does not match dims {dims}"
        )
    return np.frombuffer(data[header_end:], dtype="<f4").reshape(dims).astype(np.float32)


@dataclass
class Demonstration:
    task_id: str
    seed: int
    episode: int
    success: bool
    observations: np.ndarray  # T x obs_dim, float32
    actions: np.ndarray  # T x act_dim, float32
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=np.float32)
        self.actions = np.asarray(self.actions, dtype=np.float32)
        if self.observations.shape[0] == 0 or self.observations.shape[0] != self.actions.shape[0]:
            raise ValueError("steps must be non-empty with matching obs/action counts")

    @property
    def steps(self) -> int:
        return self.observations.shape[0]


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_format_value(x) for x in v) + "]"
    return str(v)


def write_demo(demo: Demonstration, directory: str | Path) -> Path:
    """Write one demonstration into its own directory; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_array(demo.observations, directory / "observations.mbrt")
    write_array(demo.actions, directory / "actions.mbrt")
    lines = [
        f"task_id: {demo.task_id}",
        f"seed: {demo.seed}",
        f"episode: {demo.episode}",
        f"success: {_format_value(demo.success)}",
        f"steps: {demo.steps}",
        f"observations: observations.mbrt {list(demo.observations.shape)}",
        f"actions: actions.mbrt {list(demo.actions.shape)}",
    ]
    for key in sorted(demo.metadata):
        lines.append(f"meta.{key}: {_format_value(demo.metadata[key])}")
    manifest = directory / MANIFEST_NAME
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def _parse_meta(raw: str):
    raw = raw.strip()
    if raw in ("true", "false"):
        return raw == "true"
    if raw.startswith("["):
        inner = raw[1:-1].strip()
        return [_parse_meta(x) for x in inner.split(",")] if inner else []
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


def read_demo(path: str | Path) -> Demonstration:
    """Read a demonstration directory (or its manifest path)."""
    path = Path(path)
    directory = path.parent if path.name == MANIFEST_NAME else path
    fields: dict[str, str] = {}
    meta: dict = {}
    for line in (directory / MANIFEST_NAME).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition(":")
        key = key.strip()
        if key.startswith("meta."):
            meta[key[5:]] = _parse_meta(value)
        else:
            fields[key] = value.strip()
    obs_file = fields["observations"].split()[0]
    act_file = fields["actions"].split()[0]
    obs = read_array(directory / obs_file)
    act = read_array(directory / act_file)
    if obs.shape[0] != int(fields["steps"]):
        raise PayloadMismatchError("manifest step count does not match array")
    return Demonstration(
        task_id=fields["task_id"],
        seed=int(fields["seed"]),
        episode=int(fields["episode"]),
        success=fields["success"] == "true",
        observations=obs,
        actions=act,
        metadata=meta,
    )


def load_dataset(directory: str | Path) -> list[Demonstration]:
    """All demonstrations under a dataset directory, ordered by directory name."""
    directory = Path(directory)
    demos = []
    for sub in sorted(p for p in directory.iterdir() if p.is_dir()):
        if (sub / MANIFEST_NAME).exists():
            demos.append(read_demo(sub))
    return demos


@dataclass
class DatasetSummary:
    kept: int
    dropped: int
    per_task: dict[str, int]


def filter_and_assemble(demos: list[Demonstration]) -> tuple[list[Demonstration], DatasetSummary]:
    """Keep only successful demonstrations; failures never enter training sets."""
    kept = [d for d in demos if d.success]
    per_task: dict[str, int] = {}
    for d in kept:
        per_task[d.task_id] = per_task.get(d.task_id, 0) + 1
    return kept, DatasetSummary(len(kept), len(demos) - len(kept), per_task)
