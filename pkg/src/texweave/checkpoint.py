"""Binary container for model checkpoints and texton dictionaries.

Layout: one line of JSON (header fields plus an array manifest of
name/shape/element-offset entries), a newline, then the raw little-endian
float64 payloads concatenated in manifest order.
"""

from __future__ import annotations

import json

import numpy as np

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Header, version, or shape validation failed while loading."""


def write_container(path: str, header: dict, arrays: list[tuple[str, np.ndarray]]) -> None:
    manifest = []
    offset = 0
    payloads = []
    for name, arr in arrays:
        arr = np.asarray(arr, dtype="<f8")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        payloads.append(np.ascontiguousarray(arr).tobytes())
    full = dict(header)
    full["format_version"] = FORMAT_VERSION
    full["manifest"] = manifest
    with open(path, "wb") as fh:
        fh.write(json.dumps(full, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for chunk in payloads:
            fh.write(chunk)


def read_container(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable container header in {path}: {exc}") from None
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {version!r} "
                              f"(expected {FORMAT_VERSION})")
    flat = np.frombuffer(payload, dtype="<f8")
    arrays: dict[str, np.ndarray] = {}
    for entry in header.get("manifest", []):
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        if start + size > flat.size:
            raise CheckpointError(f"array {entry['name']!r} overruns the payload")
        arrays[entry["name"]] = flat[start:start + size].reshape(shape).copy()
    return header, arrays


def save_model(path: str, model, seed: int | None = None,
               direction: str | None = None) -> None:
    """Write a direction model: config + seed header, parameters in manifest order."""
    header = {"kind": "draw-model", "config": model.config.as_dict(), "seed": seed}
    if direction is not None:
        header["direction"] = direction
    write_container(path, header, list(model.parameter_arrays().items()))


def load_model(path: str):
    """Load a direction model, validating header kind and parameter shapes."""
    from .draw import DrawConfig, DrawModel

    header, arrays = read_container(path)
    if header.get("kind") != "draw-model":
        raise CheckpointError(f"{path} holds {header.get('kind')!r}, "
                              f"expected a draw-model")
    config = DrawConfig(**header["config"])
    try:
        model = DrawModel.from_arrays(config, arrays)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from None
    return model
