"""Checkpoint file: magic, text manifest, then raw float64 blobs.

Layout::

    CAE1version = 1
    rows = 100
    ...
    blob = conv1.kernels 3x3x1x16 0 1152
    ...
    <empty line>
    <little-endian float64 blobs, in manifest order>

Blob offsets are byte offsets from the first byte after the blank line.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError, MagicError, TruncatedError, VersionError
from .model import Hyperparams, build_cae

MAGIC = b"CAE1"
VERSION = 1
_HYPER_TYPES = {
    "r": int,
    "epochs": int,
    "dropout_rate": float,
    "l2_rate": float,
    "learning_rate": float,
    "batch_size": int,
    "seed": int,
    "shuffle": lambda s: s == "true",
    "lr_schedule": str,
}


def _arrays(model):
    """Every array that defines the model state, in a fixed order."""
    out = [(p.name, p.value) for p in model.parameters()]
    for name, value in model.buffers().items():
        out.append((f"buffer.{name}", value))
    for p in model.adam.params:
        out.append((f"adam.m.{p.name}", model.adam.m[p.name]))
        out.append((f"adam.v.{p.name}", model.adam.v[p.name]))
    return out


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def manifest(model):
    """Return the manifest lines (without the terminating blank line)."""
    lines = [f"version = {VERSION}"]
    for key in ("rows", "cols", "bands"):
        lines.append(f"{key} = {getattr(model, key)}")
    for key in _HYPER_TYPES:
        lines.append(f"{key} = {_fmt(getattr(model.hyper, key))}")
    lines.append(f"adam_step = {model.adam.t}")
    offset = 0
    for name, value in _arrays(model):
        shape = "x".join(str(d) for d in value.shape)
        nbytes = value.size * 8
        lines.append(f"blob = {name} {shape} {offset} {nbytes}")
        offset += nbytes
    return lines


def save_checkpoint(model, path):
    head = MAGIC + ("\n".join(manifest(model)) + "\n\n").encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(head)
        for _, value in _arrays(model):
            fh.write(np.ascontiguousarray(value, dtype="<f8").tobytes())


def read_manifest(path):
    """Parse the header of a checkpoint; returns ``(fields, blobs, payload)``."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise MagicError(f"{path}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    end = data.find(b"\n\n", 4)
    if end < 0:
        raise TruncatedError(f"{path}: manifest is not terminated by a blank line")
    fields, blobs = {}, []
    for lineno, line in enumerate(data[4:end].decode("utf-8").split("\n"), start=1):
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"{path}: manifest line {lineno} is not 'key = value'", line=lineno)
        key, value = key.strip(), value.strip()
        if key == "blob":
            name, shape, offset, length = value.split()
            blobs.append((name, tuple(int(d) for d in shape.split("x")), int(offset), int(length)))
        else:
            fields[key] = value
    return fields, blobs, data[end + 2:]


def load_checkpoint(path):
    fields, blobs, payload = read_manifest(path)
    try:
        version = int(fields.get("version", ""))
    except ValueError:
        raise VersionError(f"{path}: missing or malformed version", field="version")
    if version != VERSION:
        raise VersionError(f"{path}: checkpoint version {version}, this build reads {VERSION}")
    try:
        hyper = Hyperparams(**{k: conv(fields[k]) for k, conv in _HYPER_TYPES.items()})
        rows, cols, bands = (int(fields[k]) for k in ("rows", "cols", "bands"))
        adam_step = int(fields["adam_step"])
    except KeyError as exc:
        raise FormatError(f"{path}: manifest is missing {exc.args[0]!r}", field=exc.args[0])

    model = build_cae(rows, cols, bands, hyper)
    targets = dict(_arrays(model))
    seen = set()
    for name, shape, offset, length in blobs:
        if name not in targets:
            raise FormatError(f"{path}: unknown blob {name!r}", field=name)
        target = targets[name]
        if shape != target.shape or length != target.size * 8:
            raise FormatError(
                f"{path}: blob {name!r} has shape {shape}, model expects {target.shape}", field=name
            )
        if offset + length > len(payload):
            raise TruncatedError(f"{path}: blob {name!r} runs past end of file", field=name)
        target[...] = np.frombuffer(payload, dtype="<f8", count=target.size, offset=offset).reshape(shape)
        seen.add(name)
    missing = set(targets) - seen
    if missing:
        raise FormatError(f"{path}: checkpoint lacks blobs {sorted(missing)}")
    model.adam.t = adam_step
    return model
