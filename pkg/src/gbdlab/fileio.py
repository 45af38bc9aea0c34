"""Field, partition and report serialization.

A field on disk is a JSON header next to a payload file: raw little-endian
float64 in row-major cell order, or CSV.  Partitions store the label grid
the same way plus a summary record.  All formats carry a schema tag.
"""
from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError
from .fields import CaccioppoliPartition, DisplacementField, Domain, JumpFacet

FIELD_SCHEMA = "gbdlab-field/1"
PARTITION_SCHEMA = "gbdlab-partition/1"
CSV_SCHEMA = "gbdlab-csv/1"


def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_field(field: DisplacementField, path, payload: str = "binary") -> None:
    """Write header (JSON) and payload (``.bin`` or ``.csv``) files.

    ``path`` is the header path; the payload sits next to it with the same
    stem.  Binary payloads round-trip bit-identically.
    """
    if payload not in ("binary", "csv"):
        raise ValueError("payload must be 'binary' or 'csv'")
    path = Path(path)
    dom = field.domain
    stem = path.with_suffix("")
    payload_name = stem.name + (".bin" if payload == "binary" else ".csv")
    header = {
        "schema": FIELD_SCHEMA,
        "d": dom.d,
        "box": dom.box.tolist(),
        "h": dom.h,
        "shape": list(dom.shape),
        "layout": "row-major cell-centered values, innermost axis = component,"
                  " float64 little-endian",
        "payload": {"file": payload_name, "format": payload},
        "facets": [
            {
                "vertices": f.vertices.tolist(),
                "normal": f.normal.tolist(),
                "jump": f.jump.tolist(),
            }
            for f in field.jumps
        ],
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(header, fh, indent=1, sort_keys=True)
        fh.write("\n")
    flat = field.values.reshape(-1, dom.d)
    target = path.parent / payload_name
    if payload == "binary":
        with open(target, "wb") as fh:
            fh.write(flat.astype("<f8").tobytes(order="C"))
    else:
        with open(target, "w") as fh:
            fh.write("# %s values\n" % CSV_SCHEMA)
            for row in flat:
                fh.write(",".join(_fmt(x) for x in row))
                fh.write("\n")


def read_field(path) -> DisplacementField:
    path = Path(path)
    with open(path) as fh:
        header = json.load(fh)
    if header.get("schema") != FIELD_SCHEMA:
        raise ConfigError(f"unsupported field schema {header.get('schema')!r}")
    dom = Domain(np.asarray(header["box"], dtype=float), float(header["h"]))
    if list(dom.shape) != list(header["shape"]):
        raise ConfigError("header shape disagrees with box and spacing")
    info = header["payload"]
    target = path.parent / info["file"]
    n = dom.cell_count
    if info["format"] == "binary":
        raw = np.fromfile(target, dtype="<f8")
        if raw.size != n * dom.d:
            raise ConfigError("payload size mismatch")
        values = raw.reshape(dom.shape + (dom.d,))
    else:
        rows = []
        with open(target) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                rows.append([float(x) for x in line.split(",")])
        values = np.asarray(rows).reshape(dom.shape + (dom.d,))
    facets = [
        JumpFacet(np.asarray(f["vertices"], dtype=float),
                  np.asarray(f["jump"], dtype=float),
                  normal=np.asarray(f["normal"], dtype=float))
        for f in header.get("facets", [])
    ]
    return DisplacementField(dom, values, facets)


def write_partition(partition: CaccioppoliPartition, path) -> None:
    path = Path(path)
    stem = path.with_suffix("")
    payload_name = stem.name + ".labels.bin"
    header = {
        "schema": PARTITION_SCHEMA,
        "d": partition.domain.d,
        "box": partition.domain.box.tolist(),
        "h": partition.domain.h,
        "shape": list(partition.domain.shape),
        "pieces": partition.piece_count,
        "perimeter": partition.perimeter,
        "payload": {"file": payload_name, "format": "binary",
                    "dtype": "<i4", "layout": "row-major"},
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(header, fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(path.parent / payload_name, "wb") as fh:
        fh.write(partition.labels.astype("<i4").tobytes(order="C"))


def read_partition(path):
    path = Path(path)
    with open(path) as fh:
        header = json.load(fh)
    if header.get("schema") != PARTITION_SCHEMA:
        raise ConfigError(f"unsupported partition schema {header.get('schema')!r}")
    dom = Domain(np.asarray(header["box"], dtype=float), float(header["h"]))
    target = path.parent / header["payload"]["file"]
    labels = np.fromfile(target, dtype="<i4").reshape(dom.shape)
    return CaccioppoliPartition(dom, labels), header


def write_csv(path, kind: str, columns: Sequence[str], rows) -> None:
    """Deterministic CSV with a schema comment line; floats at full precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(f"# {CSV_SCHEMA} {kind}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            cells = []
            for v in row:
                if isinstance(v, (float, np.floating)):
                    cells.append(_fmt(v))
                else:
                    cells.append(str(v))
            fh.write(",".join(cells) + "\n")


def write_pgm(path, array: np.ndarray) -> None:
    """Grayscale portable pixmap (P5) of a 2D grid, min-max normalized."""
    arr = np.asarray(array, dtype=float)
    if arr.ndim != 2:
        raise ValueError("pgm output needs a 2D array")
    lo, hi = float(arr.min()), float(arr.max())
    span = hi - lo if hi > lo else 1.0
    img = np.rint((arr - lo) / span * 255.0).astype(np.uint8)
    img = img.T[::-1]  # first axis rightward, second axis upward
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        fh.write(img.tobytes(order="C"))
