"""Dataset and manifest I/O.

Landmark datasets are stored either as CSV (first line ``m,k``, then one
object per row: an optional leading label followed by the m*k coordinates
landmark by landmark) or as JSON ``{"m": ..., "k": ..., "objects": [...],
"labels": [...]}`` with row-major m x k nested lists.  Floats are written
with 17 significant digits so a save/load round trip is exact.

Every CLI command records a RunManifest holding the command name, the fully
resolved parameters, the seed and the produced files; replaying a manifest
re-runs the command with identical parameters and reproduces the outputs
byte for byte.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import center

FLOAT_FMT = "{:.17g}"


def format_float(x: float) -> str:
    return FLOAT_FMT.format(float(x))


def write_csv(path, header, rows):
    """Write a delimited table with deterministic float formatting."""
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            cells = [format_float(v) if isinstance(v, (float, np.floating)) else str(v)
                     for v in row]
            fh.write(",".join(cells) + "\n")


@dataclass
class Dataset:
    """A homogeneous collection of raw m x k landmark objects."""

    m: int
    k: int
    objects: list
    labels: list | None = None
    provenance: str = ""
    configurations: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self.objects:
            raise ValueError("dataset needs at least one object")
        objs = []
        for i, o in enumerate(self.objects):
            a = np.asarray(o, dtype=float)
            if a.shape != (self.m, self.k):
                raise ValueError(
                    f"object {i}: expected shape ({self.m}, {self.k}), got {a.shape}"
                )
            objs.append(a)
        self.objects = objs
        if self.labels is not None and len(self.labels) != len(objs):
            raise ValueError("labels must match the number of objects")
        if not self.configurations:
            self.configurations = [center(o) for o in objs]


def _parse_csv_dataset(path: Path) -> Dataset:
    with open(path) as fh:
        lines = fh.read().splitlines()
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty dataset file")
    head = lines[0].split(",")
    try:
        m, k = int(head[0]), int(head[1])
    except (ValueError, IndexError) as exc:
        raise ValueError(f"{path}: line 1: header must be 'm,k' integers") from exc
    objects, labels = [], []
    any_label = False
    for lineno, ln in enumerate(lines[1:], start=2):
        cells = ln.split(",")
        label = None
        if len(cells) == m * k + 1:
            label = cells[0]
            cells = cells[1:]
            any_label = True
        if len(cells) != m * k:
            raise ValueError(f"{path}: line {lineno}: expected {m * k} coordinates, "
                             f"got {len(cells)}")
        try:
            vals = np.array([float(c) for c in cells])
        except ValueError as exc:
            raise ValueError(f"{path}: line {lineno}: {exc}") from exc
        objects.append(vals.reshape(k, m).T)
        labels.append(label if label is not None else "")
    return Dataset(m=m, k=k, objects=objects,
                   labels=labels if any_label else None,
                   provenance=f"{path}#csv")


def _parse_json_dataset(path: Path) -> Dataset:
    with open(path) as fh:
        doc = json.load(fh)
    try:
        m, k = int(doc["m"]), int(doc["k"])
        objects = doc["objects"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"{path}: need integer 'm', 'k' and an 'objects' list") from exc
    return Dataset(m=m, k=k, objects=objects, labels=doc.get("labels"),
                   provenance=f"{path}#json")


def load_dataset(path, fmt: str | None = None) -> Dataset:
    """Load and validate a dataset; objects are centered on load."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if fmt is None:
        fmt = "json" if path.suffix.lower() == ".json" else "csv"
    if fmt == "csv":
        return _parse_csv_dataset(path)
    if fmt == "json":
        return _parse_json_dataset(path)
    raise ValueError(f"unknown dataset format {fmt!r}")


def save_dataset(path, dataset: Dataset, fmt: str | None = None):
    """Write a dataset in the CSV or JSON layout accepted by load_dataset."""
    path = Path(path)
    if fmt is None:
        fmt = "json" if path.suffix.lower() == ".json" else "csv"
    if fmt == "csv":
        with open(path, "w") as fh:
            fh.write(f"{dataset.m},{dataset.k}\n")
            for i, o in enumerate(dataset.objects):
                cells = [format_float(v) for v in o.T.ravel()]
                if dataset.labels is not None:
                    cells = [str(dataset.labels[i])] + cells
                fh.write(",".join(cells) + "\n")
    elif fmt == "json":
        doc = {"m": dataset.m, "k": dataset.k,
               "objects": [o.tolist() for o in dataset.objects]}
        if dataset.labels is not None:
            doc["labels"] = list(dataset.labels)
        with open(path, "w") as fh:
            json.dump(doc, fh)
    else:
        raise ValueError(f"unknown dataset format {fmt!r}")


@dataclass
class RunManifest:
    """Record of one CLI run; replaying it reproduces the outputs."""

    command: str
    parameters: dict
    seed: int
    version: str
    wall_time_s: float = 0.0
    outputs: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)
    created: str = ""

    def save(self, path):
        doc = {
            "command": self.command,
            "parameters": self.parameters,
            "seed": self.seed,
            "version": self.version,
            "wall_time_s": self.wall_time_s,
            "outputs": self.outputs,
            "extras": self.extras,
            "created": self.created or time.strftime("%Y-%m-%dT%H:%M:%S"),
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)

    @staticmethod
    def load(path) -> "RunManifest":
        with open(path) as fh:
            doc = json.load(fh)
        return RunManifest(
            command=doc["command"],
            parameters=doc["parameters"],
            seed=doc.get("seed", 0),
            version=doc.get("version", ""),
            wall_time_s=doc.get("wall_time_s", 0.0),
            outputs=doc.get("outputs", {}),
            extras=doc.get("extras", {}),
            created=doc.get("created", ""),
        )
