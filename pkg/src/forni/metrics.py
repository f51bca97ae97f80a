"""Voxelwise FO error and region statistics."""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = ["ErrorReport", "RegionStats", "aggregate", "e_fo", "e_fo_field"]


def e_fo(estimated, truth) -> float:
    """Worst of the two mean nearest-neighbor angular errors, in degrees.

    Directions are compared up to sign. Two empty sets give 0; a single
    empty set gives 90.
    """
    W = np.asarray(estimated, dtype=float).reshape(-1, 3)
    U = np.asarray(truth, dtype=float).reshape(-1, 3)
    if len(W) == 0 and len(U) == 0:
        return 0.0
    if len(W) == 0 or len(U) == 0:
        return 90.0
    W = W / np.linalg.norm(W, axis=1, keepdims=True)
    U = U / np.linalg.norm(U, axis=1, keepdims=True)
    ang = np.degrees(np.arccos(np.clip(np.abs(W @ U.T), 0.0, 1.0)))
    return float(max(ang.min(axis=1).mean(), ang.min(axis=0).mean()))


def e_fo_field(estimated_sets, truth_sets) -> np.ndarray:
    if len(estimated_sets) != len(truth_sets):
        raise ValueError("estimated and true FO lists differ in length")
    return np.array([e_fo(a, b) for a, b in zip(estimated_sets, truth_sets)])


@dataclass
class RegionStats:
    count: int
    mean: float
    std: float


@dataclass
class ErrorReport:
    errors: np.ndarray
    regions: dict
    overall: RegionStats
    unmatched: int = 0
    metadata: dict = field(default_factory=lambda: {"std": "population", "unit": "deg"})

    def rows(self):
        yield "all", self.overall
        yield from self.regions.items()

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["label", "count", "mean_deg", "std_deg"])
        for name, s in self.rows():
            w.writerow([name, s.count, f"{s.mean:.6f}", f"{s.std:.6f}"])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def to_dict(self) -> dict:
        return {
            "overall": vars(self.overall),
            "regions": {k: vars(v) for k, v in self.regions.items()},
            "unmatched": self.unmatched,
            "metadata": self.metadata,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def _stats(x) -> RegionStats:
    x = np.asarray(x, dtype=float)
    # population standard deviation (ddof=0)
    return RegionStats(int(x.size), float(x.mean()), float(x.std()))


def aggregate(errors, labels=None, names=None, unmatched=0) -> ErrorReport:
    """Mean and population std of per-voxel errors, overall and per label.

    Parameters
    ----------
    errors : array_like
        Per-voxel e_FO in degrees.
    labels : array_like of int, optional
        Region label per voxel, aligned with ``errors``.
    names : dict, optional
        Label value to region name. Requested labels without voxels are
        dropped with a warning. Defaults to every label present.
    """
    errors = np.asarray(errors, dtype=float).ravel()
    if errors.size == 0:
        raise ValueError("no voxels to aggregate")
    regions = {}
    if labels is not None:
        labels = np.asarray(labels).ravel()
        if labels.shape != errors.shape:
            raise ValueError("labels and errors are not aligned")
        names = names or {int(v): str(int(v)) for v in np.unique(labels)}
        for value, name in names.items():
            sel = labels == value
            if not sel.any():
                warnings.warn(f"region {name!r} has no voxels; omitted from report")
                continue
            regions[name] = _stats(errors[sel])
    return ErrorReport(errors, regions, _stats(errors), int(unmatched))
