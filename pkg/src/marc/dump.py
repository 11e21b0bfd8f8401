"""MRCD binary dump format: bit-exact little-endian tensor container.

Layout:
    magic "MRCD" | version u32 LE (=1) | meta_len u64 LE | meta (UTF-8 JSON)
    then zero or more sections:
    name_len u32 LE | name (UTF-8) | dtype u8 | rows u64 LE | cols u64 LE |
    row-major payload (rows*cols*4 bytes)

dtype 0 is float32 LE, dtype 1 is uint32 LE. Section names must be
unique; unknown names round-trip untouched. Every structural violation
raises FormatError carrying the byte offset of the fault.
"""

import json
import struct

import numpy as np

from .errors import FormatError, InvalidInputError

MAGIC = b"MRCD"
VERSION = 1
DTYPE_F32 = 0
DTYPE_U32 = 1

_DTYPES = {DTYPE_F32: np.dtype("<f4"), DTYPE_U32: np.dtype("<u4")}

# Section names the rest of the package knows how to interpret.
KNOWN_SECTIONS = (
    "features", "labels", "logits", "clf_weights", "clf_bias",
    "backbone_weights", "backbone_bias", "calib_omega", "calib_beta",
)


def _dtype_code(arr):
    if arr.dtype == np.dtype("<f4"):
        return DTYPE_F32
    if arr.dtype == np.dtype("<u4"):
        return DTYPE_U32
    raise InvalidInputError(f"unsupported section dtype {arr.dtype}; use <f4 or <u4")


def as_f32(arr):
    """2-D float32 view of an array, for writing."""
    return np.ascontiguousarray(np.atleast_2d(np.asarray(arr)), dtype="<f4")


def as_u32(arr):
    return np.ascontiguousarray(np.atleast_2d(np.asarray(arr)), dtype="<u4")


def write_dump(path, meta, sections):
    """Write metadata and named 2-D arrays to `path`.

    `sections` maps name -> array of dtype <f4 or <u4. Iteration order is
    preserved in the file.
    """
    names = list(sections)
    if len(set(names)) != len(names):
        raise InvalidInputError("duplicate section names")
    meta_blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(meta_blob)))
        fh.write(meta_blob)
        for name, arr in sections.items():
            arr = np.ascontiguousarray(np.atleast_2d(arr))
            code = _dtype_code(arr)
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<B", code))
            fh.write(struct.pack("<QQ", arr.shape[0], arr.shape[1]))
            fh.write(arr.tobytes())


def read_dump(path):
    """Parse an MRCD file; returns (meta, sections) with payloads bit-exact."""
    with open(path, "rb") as fh:
        blob = fh.read()

    def need(offset, count, what):
        if offset + count > len(blob):
            raise FormatError(f"truncated file while reading {what}", offset)
        return blob[offset:offset + count]

    if need(0, 4, "magic") != MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}", 0)
    (version,) = struct.unpack("<I", need(4, 4, "version"))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    (meta_len,) = struct.unpack("<Q", need(8, 8, "meta length"))
    meta_blob = need(16, meta_len, "meta blob")
    try:
        meta = json.loads(meta_blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"meta blob is not valid UTF-8 JSON: {exc}", 16) from exc

    sections = {}
    pos = 16 + meta_len
    while pos < len(blob):
        (name_len,) = struct.unpack("<I", need(pos, 4, "section name length"))
        name_off = pos + 4
        name = need(name_off, name_len, "section name").decode("utf-8")
        if name in sections:
            raise FormatError(f"duplicate section {name!r}", pos)
        pos = name_off + name_len
        (code,) = struct.unpack("<B", need(pos, 1, f"dtype of section {name!r}"))
        if code not in _DTYPES:
            raise FormatError(f"unknown dtype code {code} in section {name!r}", pos)
        pos += 1
        rows, cols = struct.unpack("<QQ", need(pos, 16, f"shape of section {name!r}"))
        pos += 16
        nbytes = rows * cols * 4
        payload = need(pos, nbytes, f"payload of section {name!r}")
        sections[name] = np.frombuffer(payload, dtype=_DTYPES[code]).reshape(rows, cols)
        pos += nbytes
    return meta, sections


def dataset_to_sections(ds):
    """Dataset -> (meta, sections) for write_dump. Features stored as f32."""
    meta = {
        "k": int(ds.num_classes),
        "p": int(ds.feature_dim),
        "class_counts": [int(c) for c in ds.class_counts],
        "name": ds.name,
    }
    sections = {
        "features": as_f32(ds.features),
        "labels": as_u32(ds.labels.reshape(-1, 1)),
    }
    return meta, sections


def dataset_from_dump(path):
    from .data import FeatureDataset

    meta, sections = read_dump(path)
    for required in ("features", "labels"):
        if required not in sections:
            raise FormatError(f"missing section {required!r}", 0)
    labels = sections["labels"].ravel().astype(np.int64)
    counts = np.bincount(labels, minlength=int(meta["k"]))
    return FeatureDataset(
        features=sections["features"].astype(np.float64),
        labels=labels,
        class_counts=counts,
        name=meta.get("name", ""),
    )
