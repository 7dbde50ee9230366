"""Binary parameter files and CSV training curves."""

from __future__ import annotations

import csv
import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from ..errors import InvalidInputError
from .model import StcnConfig, StcnParameters, parameter_shapes

MAGIC = b"STCN"
VERSION = 1
CURVE_FIELDS = ("step", "train_l1", "val_l1", "val_psnr")


def dumps_params(config: StcnConfig, params: StcnParameters) -> bytes:
    header = json.dumps(config.to_json(), sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(header)), header]
    for name, shape in parameter_shapes(config).items():
        arr = params[name]
        if arr.shape != shape:
            raise InvalidInputError(f"{name} has shape {arr.shape}, expected {shape}")
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def loads_params(blob: bytes) -> tuple[StcnConfig, StcnParameters]:
    if blob[:4] != MAGIC:
        raise InvalidInputError("not an STCN parameter file")
    version, hlen = struct.unpack("<II", blob[4:12])
    if version != VERSION:
        raise InvalidInputError(f"unsupported parameter file version {version}")
    config = StcnConfig.from_json(json.loads(blob[12:12 + hlen]))
    pos = 12 + hlen
    arrays = OrderedDict()
    for name, shape in parameter_shapes(config).items():
        n = int(np.prod(shape)) * 8
        if pos + n > len(blob):
            raise InvalidInputError("truncated parameter file")
        arrays[name] = np.frombuffer(blob[pos:pos + n], dtype="<f8").reshape(shape).astype(np.float64)
        pos += n
    if pos != len(blob):
        raise InvalidInputError("trailing bytes in parameter file")
    return config, StcnParameters(arrays)


def save_params(path, config: StcnConfig, params: StcnParameters) -> None:
    Path(path).write_bytes(dumps_params(config, params))


def load_params(path) -> tuple[StcnConfig, StcnParameters]:
    return loads_params(Path(path).read_bytes())


def write_curves(path, curves) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_FIELDS)
        for row in curves:
            w.writerow([row.step] + [repr(float(getattr(row, f))) for f in CURVE_FIELDS[1:]])


def read_curves(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "step" else float(v)) for k, v in row.items()}
                for row in csv.DictReader(fh)]
