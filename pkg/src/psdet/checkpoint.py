"""Checkpoint I/O: a small binary tensor container plus a JSON config sidecar.

Binary layout (all integers little-endian u32, all floats little-endian
f64): the magic string "PSROI1", a tensor count, then for each tensor four
dims followed by the raw row-major payload. Tensors appear in the network's
canonical parameter order, weights first then bias per layer; 1-D biases are
stored as (1, 1, 1, n) since the format always carries four dims.

The sidecar ``<checkpoint>.json`` holds the TrainConfig needed to rebuild
the network structure before the arrays are poured back in.
"""

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from .head import LossConfig
from .network import Backbone, build_backbone
from .sampling import SamplerConfig
from .train import TrainConfig

__all__ = ["save_tensors", "load_tensors", "save_checkpoint", "load_checkpoint",
           "config_to_dict", "config_from_dict", "sidecar_path"]

MAGIC = b"PSROI1"


def save_tensors(path, tensors) -> None:
    """Write a list of arrays (each at most 4-D) to the binary container."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(tensors)))
        for t in tensors:
            arr = np.ascontiguousarray(np.asarray(t, dtype=np.float64))
            if arr.ndim > 4:
                raise ValueError(f"tensor rank {arr.ndim} exceeds the 4-dim format")
            dims = (1,) * (4 - arr.ndim) + arr.shape if arr.ndim < 4 else arr.shape
            fh.write(struct.pack("<4I", *dims))
            fh.write(arr.astype("<f8").tobytes())


def load_tensors(path) -> list[np.ndarray]:
    path = Path(path)
    data = path.read_bytes()
    if data[:len(MAGIC)] != MAGIC:
        raise ValueError(f"{path} is not a checkpoint (bad magic {data[:6]!r})")
    offset = len(MAGIC)
    (count,) = struct.unpack_from("<I", data, offset)
    offset += 4
    tensors = []
    for _ in range(count):
        dims = struct.unpack_from("<4I", data, offset)
        offset += 16
        size = int(np.prod(dims))
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=offset).reshape(dims)
        offset += size * 8
        tensors.append(arr.astype(np.float64))
    if offset != len(data):
        raise ValueError(f"{path}: {len(data) - offset} trailing bytes after {count} tensors")
    return tensors


def _as_jsonable(value):
    if dataclasses.is_dataclass(value):
        return {k: _as_jsonable(v) for k, v in dataclasses.asdict(value).items()}
    if isinstance(value, (tuple, list)):
        return [_as_jsonable(v) for v in value]
    return value


def config_to_dict(cfg: TrainConfig) -> dict:
    return _as_jsonable(cfg)


def _check_keys(given: dict, allowed, what: str) -> None:
    unknown = set(given) - set(allowed)
    if unknown:
        raise ValueError(f"unknown {what} key(s): {', '.join(sorted(unknown))}")


def config_from_dict(data: dict) -> TrainConfig:
    """Strict parse: any unknown key is an error (catches config typos)."""
    fields = {f.name for f in dataclasses.fields(TrainConfig)}
    _check_keys(data, fields, "config")
    kwargs = dict(data)
    if "lr_schedule" in kwargs:
        kwargs["lr_schedule"] = tuple((int(n), float(lr)) for n, lr in kwargs["lr_schedule"])
    for key in ("widths", "scales"):
        if kwargs.get(key) is not None:
            kwargs[key] = tuple(kwargs[key])
    if "sampler" in kwargs:
        _check_keys(kwargs["sampler"], {f.name for f in dataclasses.fields(SamplerConfig)},
                    "sampler")
        sampler = dict(kwargs["sampler"])
        if "grid_sizes" in sampler:
            sampler["grid_sizes"] = tuple(sampler["grid_sizes"])
        kwargs["sampler"] = SamplerConfig(**sampler)
    if "loss" in kwargs:
        _check_keys(kwargs["loss"], {f.name for f in dataclasses.fields(LossConfig)}, "loss")
        kwargs["loss"] = LossConfig(**kwargs["loss"])
    return TrainConfig(**kwargs)


def sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def save_checkpoint(path, net: Backbone, cfg: TrainConfig) -> None:
    tensors = []
    for _, layer in net.parameters():
        tensors.append(layer.weights)
        tensors.append(layer.bias)
    save_tensors(path, tensors)
    with open(sidecar_path(path), "w") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> tuple[Backbone, TrainConfig]:
    with open(sidecar_path(path)) as fh:
        cfg = config_from_dict(json.load(fh))
    net = build_backbone(cfg.k, cfg.num_classes, np.random.default_rng(0),
                         widths=cfg.widths, reduce_width=cfg.reduce_width)
    tensors = load_tensors(path)
    params = net.parameters()
    if len(tensors) != 2 * len(params):
        raise ValueError(f"checkpoint holds {len(tensors)} tensors, "
                         f"network needs {2 * len(params)}")
    for (name, layer), idx in zip(params, range(0, len(tensors), 2)):
        w, b = tensors[idx], tensors[idx + 1]
        if w.shape != layer.weights.shape:
            raise ValueError(f"{name}: weight shape {w.shape} does not match "
                             f"{layer.weights.shape}")
        layer.weights = w.copy()
        layer.bias = b.reshape(layer.bias.shape).copy()
    return net, cfg
