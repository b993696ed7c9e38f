"""Deterministic network checkpoints.

File layout (normative, bit-exact):

    NTCKPT 1\n
    spec <model spec as one JSON line>\n
    tensor <name> <d0xd1x...> <byte-offset>\n      (one per registry entry,
                                                    declaration order)
    payload <nbytes> crc32 <8 hex digits>\n
    ---\n
    <raw little-endian float32 payload>

The parameter table covers the full registry: trainable tensors plus the
normalization running statistics.  Offsets are contiguous and in
declaration order; the CRC-32 is computed over the payload bytes.
"""

import json
import zlib

import numpy as np

from .errors import CorruptionError, FormatError, SchemaError, VersionError
from .model import ModelSpec, Network

MAGIC = "NTCKPT"
FORMAT_VERSION = 1


def save(net, path):
    """Write ``net`` to ``path``; float32 networks only."""
    if net.dtype != np.float32:
        raise SchemaError(f"checkpoints are float32-only, network is {net.dtype}")
    reg = net.full_registry()
    header = [f"{MAGIC} {FORMAT_VERSION}",
              "spec " + json.dumps(net.spec.to_dict(), separators=(",", ":"))]
    chunks = []
    offset = 0
    for name, arr in reg.items():
        dims = "x".join(str(d) for d in arr.shape)
        header.append(f"tensor {name} {dims} {offset}")
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header.append(f"payload {len(payload)} crc32 {zlib.crc32(payload):08x}")
    header.append("---")
    with open(path, "wb") as f:
        f.write("\n".join(header).encode("ascii") + b"\n")
        f.write(payload)


def _parse_header(blob, path):
    marker = b"\n---\n"
    cut = blob.find(marker)
    if cut < 0:
        raise FormatError(f"{path}: missing header terminator")
    lines = blob[:cut].decode("ascii", errors="replace").split("\n")
    payload = blob[cut + len(marker):]

    magic_line = lines[0].split()
    if len(magic_line) != 2 or magic_line[0] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    if int(magic_line[1]) != FORMAT_VERSION:
        raise VersionError(f"{path}: format version {magic_line[1]}, "
                           f"expected {FORMAT_VERSION}")

    if not lines[1].startswith("spec "):
        raise FormatError(f"{path}: missing spec line")
    spec = ModelSpec.from_dict(json.loads(lines[1][5:]))

    table = []
    declared = crc = None
    for line in lines[2:]:
        parts = line.split()
        if parts[0] == "tensor":
            name, dims, off = parts[1], parts[2], int(parts[3])
            shape = tuple(int(d) for d in dims.split("x"))
            table.append((name, shape, off))
        elif parts[0] == "payload":
            declared, crc = int(parts[1]), parts[3]
        else:
            raise FormatError(f"{path}: unexpected header line {line!r}")
    if declared is None:
        raise FormatError(f"{path}: missing payload line")
    if len(payload) != declared:
        raise CorruptionError(
            f"{path}: payload is {len(payload)} bytes, header says {declared}")
    if f"{zlib.crc32(payload):08x}" != crc:
        raise CorruptionError(f"{path}: payload checksum mismatch")
    return spec, table, payload


def load(path):
    """Rebuild a network from ``path``; every tensor restored bitwise."""
    with open(path, "rb") as f:
        blob = f.read()
    spec, table, payload = _parse_header(blob, path)

    net = Network(spec, rng=None, dtype=np.float32)
    reg = net.full_registry()
    if [name for name, _, _ in table] != list(reg):
        raise SchemaError(f"{path}: parameter table does not match the "
                          f"model spec's registry")

    values = {}
    expected = 0
    for name, shape, off in table:
        if tuple(reg[name].shape) != shape:
            raise SchemaError(f"{path}: {name} has shape {shape}, "
                              f"spec implies {tuple(reg[name].shape)}")
        if off != expected:
            raise SchemaError(f"{path}: {name} offset {off}, expected {expected}")
        nbytes = int(np.prod(shape)) * 4
        values[name] = np.frombuffer(
            payload, dtype="<f4", count=int(np.prod(shape)), offset=off,
        ).reshape(shape)
        expected = off + nbytes
    if expected != len(payload):
        raise SchemaError(f"{path}: payload has {len(payload) - expected} "
                          "unaccounted bytes")
    net.load_registry(values)
    return net
