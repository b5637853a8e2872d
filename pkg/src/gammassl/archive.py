"""Named-tensor archive ("GSSL1") and the per-domain dataset directory layout.

Layout: magic b"GSSL1", uint32 entry count, then per entry: uint32 name
length, UTF-8 name, 3-byte dtype tag b"f32", uint32 rank, uint64 dims,
little-endian float32 payload.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import torch

from .datagen import LabeledSample
from .errors import DataError, ParseError

MAGIC = b"GSSL1"
DTYPE_TAG = b"f32"


def encode_archive(tensors: dict) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(tensors))]
    for name, value in tensors.items():
        arr = value.detach().cpu().numpy() if isinstance(value, torch.Tensor) else np.asarray(value)
        arr = np.asarray(arr, dtype="<f4", order="C")
        raw = name.encode("utf-8")
        parts += [struct.pack("<I", len(raw)), raw, DTYPE_TAG, struct.pack("<I", arr.ndim)]
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode_archive(blob: bytes) -> dict[str, np.ndarray]:
    if blob[: len(MAGIC)] != MAGIC:
        raise DataError("not a GSSL1 archive (bad magic)")
    pos = len(MAGIC)

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise DataError("truncated archive")
        chunk = blob[pos : pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        if take(3) != DTYPE_TAG:
            raise DataError(f"{name}: unsupported dtype tag")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank))
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape).copy()
        if name in out:
            raise DataError(f"duplicate entry {name!r}")
        out[name] = arr
    if pos != len(blob):
        raise DataError("trailing bytes after last entry")
    return out


def write_archive(path, tensors: dict) -> None:
    if len(set(tensors)) != len(tensors):
        raise DataError("entry names must be unique")
    Path(path).write_bytes(encode_archive(tensors))


def read_archive(path) -> dict[str, np.ndarray]:
    return decode_archive(Path(path).read_bytes())


def save_model(path, model) -> None:
    write_archive(path, {k: v for k, v in model.state_dict().items()})


def load_model_state(model, path) -> None:
    state = read_archive(path)
    current = model.state_dict()
    missing = sorted(set(current) - set(state))
    if missing:
        raise DataError(f"{path}: missing tensors {missing[:3]}")
    model.load_state_dict({k: torch.as_tensor(state[k], dtype=current[k].dtype) for k in current})


# -- datasets ------------------------------------------------------------------

MANIFEST = "manifest.txt"


def write_samples(directory, samples: list[LabeledSample], meta: dict) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [f"{k}={v}" for k, v in meta.items()] + [f"count={len(samples)}"]
    for i, s in enumerate(samples):
        fname = f"sample_{i:05d}.gssl"
        write_archive(
            directory / fname,
            {"image": s.image, "labels": s.labels, "ood_mask": s.ood_mask},
        )
        lines.append(f"sample={fname}")
    (directory / MANIFEST).write_text("\n".join(lines) + "\n")


def read_manifest(directory) -> tuple[dict, list[str]]:
    path = Path(directory) / MANIFEST
    meta, files = {}, []
    count_line = 0
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep or not key:
            raise ParseError(path, lineno, f"expected key=value, got {line!r}")
        if key == "sample":
            files.append(value)
        else:
            if key == "count":
                count_line = lineno
            meta[key] = value
    if "count" not in meta:
        raise ParseError(path, 0, "missing count entry")
    try:
        count = int(meta["count"])
    except ValueError:
        raise ParseError(path, count_line, f"count is not an integer: {meta['count']!r}") from None
    if count != len(files):
        raise ParseError(path, count_line, f"count={count} but {len(files)} sample entries")
    return meta, files


def read_samples(directory) -> tuple[dict, list[LabeledSample]]:
    meta, files = read_manifest(directory)
    samples = []
    for fname in files:
        t = read_archive(Path(directory) / fname)
        samples.append(
            LabeledSample(
                image=t["image"],
                labels=t["labels"].astype(np.int64),
                ood_mask=t["ood_mask"].astype(bool),
            )
        )
    return meta, samples
