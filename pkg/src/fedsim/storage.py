"""On-disk formats: federated dataset container and parameter files.

Dataset container (all integers little-endian)::

    8 bytes   magic  b"FEDSIMDS"
    u32       format version (currently 1)
    u32       header length in bytes
    header    UTF-8 JSON: column schema, client index, metadata index,
              total payload size
    payload   float64 little-endian blocks

The client index lists ``id``, ``offset`` (relative to the payload start),
``num_examples`` and ``nbytes`` per client. A client block holds its columns
back to back in schema order, each row-major. Metadata arrays follow the
client blocks.

Parameter files are JSON; floats are written with ``repr`` precision so
they round-trip exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from .data import ClientDataset, FederatedData
from .exceptions import FormatError
from .tensor import ParamTree, tree_flatten, tree_unflatten

__all__ = ["FORMAT_VERSION", "MAGIC", "load_federated", "load_params", "save_federated", "save_params"]

MAGIC = b"FEDSIMDS"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sII")
_F64 = np.dtype("<f8")


def _schema(fd: FederatedData) -> list[tuple[str, tuple[int, ...]]]:
    schema = None
    for cid, ds in fd.clients():
        cols = [(name, tuple(values.shape[1:])) for name, values in ds.columns.items()]
        if schema is None:
            schema = cols
        elif cols != schema:
            raise ValueError(f"client {cid!r} has column schema {cols}, expected {schema}")
    return schema or []


def _row_width(shape: tuple[int, ...]) -> int:
    return int(np.prod(shape, dtype=np.int64)) if shape else 1


def save_federated(fd: FederatedData, path) -> None:
    schema = _schema(fd)
    blocks: list[bytes] = []
    clients = []
    offset = 0
    for cid, ds in fd.clients():
        chunk = b"".join(np.ascontiguousarray(ds[name], dtype=_F64).tobytes() for name, _ in schema)
        clients.append({"id": cid, "offset": offset, "num_examples": ds.num_examples, "nbytes": len(chunk)})
        blocks.append(chunk)
        offset += len(chunk)
    metadata = []
    for name, values in fd.metadata.items():
        chunk = np.ascontiguousarray(values, dtype=_F64).tobytes()
        metadata.append({"name": name, "shape": list(values.shape), "offset": offset, "nbytes": len(chunk)})
        blocks.append(chunk)
        offset += len(chunk)
    header = {
        "columns": [{"name": name, "trailing_shape": list(shape)} for name, shape in schema],
        "clients": clients,
        "metadata": metadata,
        "payload_nbytes": offset,
    }
    header_bytes = json.dumps(header, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for chunk in blocks:
            fh.write(chunk)


def _block(payload: bytes, offset: int, nbytes: int, where: str) -> memoryview:
    if offset < 0 or nbytes < 0 or offset + nbytes > len(payload):
        raise FormatError(f"{where}: block [{offset}, {offset + nbytes}) outside payload of {len(payload)} bytes")
    return memoryview(payload)[offset : offset + nbytes]


def load_federated(path) -> FederatedData:
    """Read a dataset container.

    Raises:
        FormatError: bad magic, unsupported version, truncation, or a client
            whose block size disagrees with its example count.
    """
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise FormatError(f"{path}: file too short for a dataset header")
    magic, version, header_len = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: not a fedsim dataset (bad magic)")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version} (expected {FORMAT_VERSION})")
    body = raw[_PREFIX.size :]
    if len(body) < header_len:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(body[:header_len].decode("utf-8"))
        columns = [(c["name"], tuple(int(s) for s in c["trailing_shape"])) for c in header["columns"]]
        client_index = header["clients"]
        metadata_index = header["metadata"]
        payload_nbytes = int(header["payload_nbytes"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed header: {exc}") from exc
    payload = body[header_len:]
    if len(payload) != payload_nbytes:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, header says {payload_nbytes} (truncated or corrupt)"
        )

    width = sum(_row_width(shape) for _, shape in columns)
    clients = {}
    try:
        for entry in client_index:
            cid, n = str(entry["id"]), int(entry["num_examples"])
            nbytes, offset = int(entry["nbytes"]), int(entry["offset"])
            if nbytes != n * width * _F64.itemsize:
                raise FormatError(
                    f"{path}: client {cid!r}: block of {nbytes} bytes does not match "
                    f"num_examples={n} (expected {n * width * _F64.itemsize})"
                )
            block = _block(payload, offset, nbytes, f"client {cid!r}")
            cols, pos = {}, 0
            for name, shape in columns:
                count = n * _row_width(shape)
                cols[name] = np.frombuffer(block, dtype=_F64, count=count, offset=pos).reshape((n,) + shape)
                pos += count * _F64.itemsize
            if cid in clients:
                raise FormatError(f"{path}: duplicate client id {cid!r}")
            clients[cid] = ClientDataset(cols)
        metadata = {}
        for entry in metadata_index:
            shape = tuple(int(s) for s in entry["shape"])
            block = _block(payload, int(entry["offset"]), int(entry["nbytes"]), f"metadata {entry['name']!r}")
            if len(block) != _row_width(shape) * _F64.itemsize:
                raise FormatError(f"{path}: metadata {entry['name']!r} size does not match shape {shape}")
            metadata[str(entry["name"])] = np.frombuffer(block, dtype=_F64).reshape(shape)
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed index entry: {exc}") from exc
    return FederatedData(clients, metadata)


def save_params(params: ParamTree, path) -> None:
    leaves = [
        {"path": p, "shape": list(np.shape(leaf)), "data": [float(v) for v in np.ravel(leaf)]}
        for p, leaf in tree_flatten(params)
    ]
    doc = {"format": "fedsim-params", "version": FORMAT_VERSION, "leaves": leaves}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_params(path) -> ParamTree:
    try:
        doc: Any = json.loads(Path(path).read_text(encoding="utf-8"))
    except ValueError as exc:
        raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != "fedsim-params":
        raise FormatError(f"{path}: not a fedsim params file")
    if doc.get("version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported params version {doc.get('version')}")
    items = []
    try:
        for leaf in doc["leaves"]:
            shape = tuple(int(s) for s in leaf["shape"])
            data = np.asarray(leaf["data"], dtype=np.float64)
            if data.size != _row_width(shape):
                raise FormatError(f"{path}: leaf {leaf['path']!r} has {data.size} values for shape {shape}")
            items.append((leaf["path"], data.reshape(shape)))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: malformed params file: {exc}") from exc
    return tree_unflatten(items)
