"""SMT1 binary tensor files.

Layout: the 4 magic bytes ``SMT1``, a little-endian u32 ``ndim``, ``ndim``
little-endian u32 dimensions, then ``prod(dims)`` little-endian float64
values in row-major order.
"""

import json
import os
import struct

import numpy as np

MAGIC = b"SMT1"


class FormatError(ValueError):
    """Bytes do not form a valid SMT1 tensor."""


def to_bytes(array):
    arr = np.asarray(array, dtype="<f8", order="C")
    header = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes(order="C")


def from_bytes(buf):
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise FormatError("missing SMT1 magic")
    (ndim,) = struct.unpack_from("<I", buf, 4)
    offset = 8 + 4 * ndim
    if len(buf) < offset:
        raise FormatError("truncated SMT1 header")
    dims = struct.unpack_from(f"<{ndim}I", buf, 8)
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    if len(buf) != offset + 8 * count:
        raise FormatError(f"expected {count} float64 values, got {(len(buf) - offset) / 8:g}")
    values = np.frombuffer(buf, dtype="<f8", count=count, offset=offset)
    return values.reshape(dims).astype(np.float64)


def save_tensor(path, array):
    with open(path, "wb") as fh:
        fh.write(to_bytes(array))


def load_tensor(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def save_weights(directory, named_arrays, manifest):
    """Write one ``<name>.smt`` per tensor plus ``manifest.json``.

    ``manifest`` is extended with the tensor order under ``"tensors"``.
    """
    os.makedirs(directory, exist_ok=True)
    names = list(named_arrays)
    for name in names:
        save_tensor(os.path.join(directory, f"{name}.smt"), named_arrays[name])
    manifest = dict(manifest, tensors=names)
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_weights(directory):
    """Inverse of :func:`save_weights`; returns ``(named_arrays, manifest)``."""
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    arrays = {name: load_tensor(os.path.join(directory, f"{name}.smt"))
              for name in manifest["tensors"]}
    return arrays, manifest
