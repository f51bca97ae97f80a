"""Volume, gradient-table and FO-field file formats.

Volumes are single-file NIfTI-1 (``.nii``), float32, little-endian. An FO
field is stored as a companion set sharing one prefix::

    <prefix>_dirs.nii    X x Y x Z x 3*F_max, unit FO triples, zero padded
    <prefix>_count.nii   X x Y x Z, number of FO triples per voxel
    <prefix>.json        sidecar: basis parameters, config, software version
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import nibabel as nib
import numpy as np

from .geometry import GradientScheme, canonicalize

__all__ = [
    "DWIData",
    "DataError",
    "FOFile",
    "F_MAX",
    "load_dwi",
    "load_fo_file",
    "load_volume",
    "normalize_signals",
    "read_bvals",
    "read_bvecs",
    "save_fo_file",
    "save_volume",
    "write_gradient_table",
]

F_MAX = 5
B0_THRESHOLD = 50.0
SIGNAL_CLAMP = (1e-6, 1.0)


class DataError(ValueError):
    """Malformed or inconsistent input data."""


def _le_float32(data):
    return np.asarray(data, dtype="<f4")


def save_volume(path, data, affine=None, voxel_size=None):
    """Write ``data`` as a float32 NIfTI-1 file."""
    path = Path(path)
    if path.suffix != ".nii":
        raise ValueError(f"{path}: only uncompressed .nii output is supported")
    arr = _le_float32(data)
    affine = np.diag([*(voxel_size or (1.0, 1.0, 1.0)), 1.0]) if affine is None else affine
    img = nib.Nifti1Image(arr, np.asarray(affine, dtype=float))
    img.header.set_data_dtype(np.float32)
    img.header.set_xyzt_units("mm", "sec")
    if voxel_size is not None:
        img.header.set_zooms(tuple(voxel_size) + img.header.get_zooms()[3:])
    path.parent.mkdir(parents=True, exist_ok=True)
    nib.save(img, str(path))


def load_volume(path):
    """Read a NIfTI-1 volume as float32. Returns ``(data, affine, voxel_size)``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such file")
    try:
        img = nib.load(str(path))
        data = np.asarray(img.dataobj, dtype=np.float32)
    except Exception as exc:  # nibabel raises several types for bad headers
        raise DataError(f"{path}: unreadable NIfTI volume ({exc})") from None
    if np.isnan(data).any():
        raise DataError(f"{path}: volume contains NaN values")
    return data, img.affine, tuple(float(z) for z in img.header.get_zooms()[:3])


def read_bvals(path) -> np.ndarray:
    try:
        return np.loadtxt(path, ndmin=1).ravel()
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: cannot parse b-values ({exc})") from None


def read_bvecs(path, n=None) -> np.ndarray:
    """Gradient vectors as ``(n, 3)``; three rows or three columns are accepted."""
    try:
        v = np.loadtxt(path, ndmin=2)
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: cannot parse b-vectors ({exc})") from None
    if v.shape[0] == 3 and (v.shape[1] != 3 or n == 3 or n is None):
        v = v.T
    elif v.shape[1] != 3:
        raise DataError(f"{path}: expected three rows or three columns, got {v.shape}")
    return v


def write_gradient_table(prefix, scheme: GradientScheme):
    """FSL-style ``<prefix>.bval`` (one row) and ``<prefix>.bvec`` (three rows)."""
    prefix = Path(prefix)
    fmt = lambda xs: " ".join(f"{x:.17g}" for x in xs)  # noqa: E731
    Path(f"{prefix}.bval").write_text(fmt(scheme.bvals) + "\n")
    Path(f"{prefix}.bvec").write_text("\n".join(fmt(row) for row in scheme.bvecs.T) + "\n")


@dataclass
class DWIData:
    signals: np.ndarray  # (X, Y, Z, K) normalized, weighted measurements only
    scheme: GradientScheme
    s0: np.ndarray
    affine: np.ndarray
    voxel_size: tuple


def normalize_signals(raw, scheme: GradientScheme):
    """Average baselines into ``S0`` and return ``(y, S0)`` with ``y`` clamped."""
    raw = np.asarray(raw, dtype=float)
    base = scheme.baseline_mask
    if not base.any():
        raise DataError("no baseline (b < 50 s/mm^2) measurement for normalization")
    s0 = raw[..., base].mean(axis=-1)
    weighted = raw[..., ~base]
    y = np.divide(weighted, s0[..., None], out=np.zeros_like(weighted),
                  where=s0[..., None] > 0)
    return np.clip(y, *SIGNAL_CLAMP), s0


def load_dwi(dwi_path, bval_path, bvec_path) -> DWIData:
    """Load a 4D DWI series with its gradient table and normalize by ``S0``."""
    data, affine, zooms = load_volume(dwi_path)
    if data.ndim != 4:
        raise DataError(f"{dwi_path}: expected a 4D volume, got {data.ndim}D")
    n = data.shape[3]
    bvals = read_bvals(bval_path)
    bvecs = read_bvecs(bvec_path, len(bvals))
    if len(bvals) != n:
        raise DataError(f"{bval_path}: {len(bvals)} b-values for {n} volumes in {dwi_path}")
    if len(bvecs) != n:
        raise DataError(f"{bvec_path}: {len(bvecs)} vectors for {n} volumes in {dwi_path}")
    try:
        scheme = GradientScheme(bvals, bvecs, B0_THRESHOLD)
    except ValueError as exc:
        bad = np.flatnonzero((bvals >= B0_THRESHOLD) & (np.linalg.norm(bvecs, axis=1) == 0))
        where = f" (measurement {bad[0]})" if len(bad) else ""
        raise DataError(f"{bvec_path}: {exc}{where}") from None
    if scheme.n_baselines == 0:
        raise DataError(f"{bval_path}: no baseline (b < {B0_THRESHOLD:g}) measurement")
    y, s0 = normalize_signals(data, scheme)
    return DWIData(y, scheme, s0, affine, zooms)


def _prefix(path) -> Path:
    p = str(path)
    for suffix in ("_dirs.nii", "_count.nii", ".json"):
        if p.endswith(suffix):
            return Path(p[: -len(suffix)])
    return Path(p)


def save_fo_file(prefix, shape, voxels, fo_sets, metadata=None, affine=None,
                 voxel_size=None, f_max=F_MAX):
    """Write FO sets for ``voxels`` into the companion volume pair and sidecar.

    ``f_max`` is a lower bound on the slot count; it grows to the largest
    per-voxel FO count so no direction is dropped.
    """
    prefix = _prefix(prefix)
    fo_sets = [np.asarray(fos, dtype=float).reshape(-1, 3) for fos in fo_sets]
    # widen rather than drop FOs when a voxel exceeds the default slot count
    f_max = max([f_max] + [len(fos) for fos in fo_sets])
    dirs = np.zeros(tuple(shape) + (3 * f_max,), dtype=np.float32)
    count = np.zeros(tuple(shape), dtype=np.float32)
    for v, fos in zip(voxels, fo_sets):
        if len(fos):
            dirs[tuple(v)][: 3 * len(fos)] = canonicalize(fos).ravel()
        count[tuple(v)] = len(fos)
    save_volume(f"{prefix}_dirs.nii", dirs, affine, voxel_size)
    save_volume(f"{prefix}_count.nii", count, affine, voxel_size)
    meta = {"f_max": f_max, **(metadata or {})}
    Path(f"{prefix}.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


@dataclass
class FOFile:
    dirs: np.ndarray
    count: np.ndarray
    metadata: dict
    affine: np.ndarray

    @property
    def shape(self):
        return self.count.shape

    def fo_set(self, voxel) -> np.ndarray:
        v = tuple(voxel)
        n = int(self.count[v])
        return self.dirs[v][: 3 * n].reshape(n, 3).astype(float)


def load_fo_file(path) -> FOFile:
    prefix = _prefix(path)
    dirs, affine, _ = load_volume(f"{prefix}_dirs.nii")
    count, _, _ = load_volume(f"{prefix}_count.nii")
    if dirs.shape[:3] != count.shape or dirs.ndim != 4 or dirs.shape[3] % 3:
        raise DataError(f"{prefix}: direction and count volumes disagree")
    meta_path = Path(f"{prefix}.json")
    metadata = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return FOFile(dirs, count.astype(np.int64), metadata, affine)
