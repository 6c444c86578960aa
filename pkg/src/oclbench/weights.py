"""Flat binary tensor container: a textual header plus a float64 payload.

Layout (header lines are ASCII, '\n' terminated):

    OCLW1
    count <k>
    tensor <name> <ndim> <dim...> <offset>
    ...
    end
    <payload: little-endian float64, row-major, concatenated>

Offsets are byte positions relative to the start of the payload, which
begins immediately after the "end" line.
"""

from __future__ import annotations

import numpy as np

from .errors import FormatError

MAGIC = b"OCLW1"


def save_weights(path, tensors: dict[str, np.ndarray]) -> None:
    """Write tensors in name order; offsets follow that order."""
    names = sorted(tensors)
    header = [MAGIC.decode(), f"count {len(names)}"]
    payload = bytearray()
    for name in names:
        arr = np.ascontiguousarray(tensors[name], dtype=np.float64)
        dims = " ".join(str(d) for d in arr.shape)
        header.append(f"tensor {name} {arr.ndim} {dims} {len(payload)}".rstrip())
        payload += arr.astype("<f8").tobytes()
    header.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(bytes(payload))


def _parse_header(blob: bytes, path) -> tuple[list[tuple[str, tuple[int, ...], int]], int]:
    """Returns ([(name, shape, offset)], payload_start)."""
    end = blob.find(b"\nend\n")
    if not blob.startswith(MAGIC + b"\n"):
        raise FormatError(f"{path}: bad magic at byte 0, expected {MAGIC.decode()}")
    if end < 0:
        raise FormatError(f"{path}: header has no 'end' line (searched {len(blob)} bytes)")
    payload_start = end + len(b"\nend\n")
    lines = blob[:end].decode("ascii", errors="replace").split("\n")
    if len(lines) < 2 or not lines[1].startswith("count "):
        raise FormatError(f"{path}: missing count line at byte {len(MAGIC) + 1}")
    try:
        count = int(lines[1].split()[1])
    except (IndexError, ValueError):
        raise FormatError(f"{path}: unparsable count line '{lines[1]}'") from None
    entries = []
    if len(lines) - 2 != count:
        raise FormatError(f"{path}: header declares {count} tensors, found {len(lines) - 2}")
    for ln in lines[2:]:
        parts = ln.split()
        if len(parts) < 4 or parts[0] != "tensor":
            raise FormatError(f"{path}: malformed tensor line '{ln}'")
        name = parts[1]
        try:
            ndim = int(parts[2])
            dims = tuple(int(x) for x in parts[3:3 + ndim])
            offset = int(parts[3 + ndim])
        except (IndexError, ValueError):
            raise FormatError(f"{path}: malformed tensor line '{ln}'") from None
        entries.append((name, dims, offset))
    return entries, payload_start


def load_weights(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    entries, payload_start = _parse_header(blob, path)
    payload = blob[payload_start:]
    out = {}
    for name, dims, offset in entries:
        nbytes = int(np.prod(dims)) * 8 if dims else 8
        if offset < 0 or offset + nbytes > len(payload):
            raise FormatError(
                f"{path}: tensor '{name}' spans bytes {offset}..{offset + nbytes} "
                f"of a {len(payload)}-byte payload (payload starts at byte {payload_start})")
        arr = np.frombuffer(payload, dtype="<f8",
                            count=int(np.prod(dims)) if dims else 1,
                            offset=offset)
        out[name] = arr.reshape(dims).astype(np.float64)
    return out


def inspect_weights(path) -> list[tuple[str, tuple[int, ...]]]:
    """Name/shape table from the header (payload untouched beyond bounds)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    entries, _ = _parse_header(blob, path)
    return [(name, dims) for name, dims, _ in entries]
