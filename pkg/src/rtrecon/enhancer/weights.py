"""Single-file weight format.

Layout: an ASCII manifest, one record per line, closed by a line ``END``,
then the payload of little-endian float32 tensors back to back::

    rtrecon-weights 1
    config depth=3 base_filters=8 dropout_rate=0.05 input_channels=2 input_shortcut=True seed=0
    meta <key>=<value>                 (optional, any number)
    tensor <name> <d0,d1,...> <offset> <nbytes>
    END

Offsets are relative to the first payload byte.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import FormatError, TruncatedPayloadError
from .network import NetworkConfig, UNet

MAGIC = "rtrecon-weights 1"


def _config_line(config: NetworkConfig) -> str:
    return "config " + " ".join(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}"
                                for k, v in config.to_dict().items())


def encode_weights(net: UNet, meta: dict | None = None) -> bytes:
    lines = [MAGIC, _config_line(net.config)]
    for k, v in (meta or {}).items():
        text = str(v)
        if "\n" in text:
            raise FormatError(f"meta value for {k!r} contains a newline")
        lines.append(f"meta {k}={text}")
    blobs, offset = [], 0
    for name, arr in net.state().items():
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        shape = ",".join(str(d) for d in arr.shape)
        lines.append(f"tensor {name} {shape} {offset} {len(blob)}")
        blobs.append(blob)
        offset += len(blob)
    lines.append("END")
    return ("\n".join(lines) + "\n").encode("ascii") + b"".join(blobs)


def save_weights(net: UNet, path, meta: dict | None = None) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_weights(net, meta))
    tmp.replace(path)


def decode_weights(raw: bytes, dtype=np.float32) -> tuple[UNet, dict]:
    end = raw.find(b"\nEND\n")
    if end < 0:
        raise FormatError("weights manifest has no END line")
    header = raw[:end].decode("ascii").split("\n")
    payload = raw[end + len(b"\nEND\n"):]
    if not header or header[0] != MAGIC:
        raise FormatError("not an rtrecon weights file")
    config, meta, tensors = None, {}, {}
    for line in header[1:]:
        kind, _, rest = line.partition(" ")
        if kind == "config":
            config = NetworkConfig.from_dict(dict(kv.split("=", 1) for kv in rest.split()))
        elif kind == "meta":
            k, _, v = rest.partition("=")
            meta[k] = v
        elif kind == "tensor":
            name, shape, off, nbytes = rest.split()
            dims = tuple(int(d) for d in shape.split(",")) if shape else ()
            off, nbytes = int(off), int(nbytes)
            if off + nbytes > len(payload):
                raise TruncatedPayloadError(f"tensor {name} runs past end of payload")
            if nbytes != 4 * int(np.prod(dims)):
                raise FormatError(f"tensor {name}: {nbytes} bytes for shape {dims}")
            tensors[name] = np.frombuffer(payload, "<f4", count=nbytes // 4, offset=off).reshape(dims)
        else:
            raise FormatError(f"unknown manifest record {kind!r}")
    if config is None:
        raise FormatError("weights manifest has no config line")
    net = UNet(config, dtype=dtype)
    net.load_state(tensors)
    net.set_training(False)
    return net, meta


def load_weights(path, dtype=np.float32) -> tuple[UNet, dict]:
    return decode_weights(Path(path).read_bytes(), dtype)
