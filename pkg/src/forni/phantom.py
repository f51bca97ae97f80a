"""Digital crossing phantom: tract geometry, ground truth, signals and Rician noise."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .geometry import GradientScheme, canonicalize

__all__ = [
    "ArcTract",
    "GroundTruth",
    "PhantomSpec",
    "SpecError",
    "StraightTract",
    "add_rician",
    "default_spec",
    "gradient_directions",
    "load_spec",
    "make_phantom",
    "rasterize",
    "save_spec",
    "synthesize",
]

MAX_FOS = 3
MERGE_DEG = 5.0


class SpecError(ValueError):
    pass


@dataclass
class StraightTract:
    """Straight tract of rectangular cross-section through ``center``.

    ``thickness`` is measured along the in-plane normal ``z x direction``
    (or x for tracts along z) and ``height`` along the remaining axis.
    """

    center: tuple
    direction: tuple
    thickness: float
    height: float
    kind: str = field(default="straight", init=False)

    def frame(self):
        d = np.asarray(self.direction, dtype=float)
        d = d / np.linalg.norm(d)
        e1 = np.cross([0.0, 0.0, 1.0], d)
        if np.linalg.norm(e1) < 1e-9:
            e1 = np.array([1.0, 0.0, 0.0])
        e1 = e1 / np.linalg.norm(e1)
        e2 = np.cross(d, e1)
        return d, e1, e2

    def cover(self, points):
        """Membership mask and local unit directions for ``(P, 3)`` voxel centers."""
        d, e1, e2 = self.frame()
        rel = points - np.asarray(self.center, dtype=float)
        inside = (np.abs(rel @ e1) <= self.thickness / 2 + 1e-9) & (
            np.abs(rel @ e2) <= self.height / 2 + 1e-9
        )
        return inside, np.broadcast_to(d, points.shape)


@dataclass
class ArcTract:
    """Circular-arc tract in a plane of constant z.

    Angles in degrees, measured counterclockwise from +x around ``center``;
    the arc runs from ``start_deg`` to ``end_deg``.
    """

    center: tuple
    radius: float
    start_deg: float
    end_deg: float
    thickness: float
    height: float
    kind: str = field(default="arc", init=False)

    def cover(self, points):
        rel = points - np.asarray(self.center, dtype=float)
        rho = np.hypot(rel[:, 0], rel[:, 1])
        phi = np.degrees(np.arctan2(rel[:, 1], rel[:, 0]))
        span = (self.end_deg - self.start_deg) % 360.0
        inside = (
            (np.abs(rho - self.radius) <= self.thickness / 2 + 1e-9)
            & (np.abs(rel[:, 2]) <= self.height / 2 + 1e-9)
            & ((phi - self.start_deg) % 360.0 <= span + 1e-9)
        )
        t = np.radians(phi)
        tangent = np.stack([-np.sin(t), np.cos(t), np.zeros_like(t)], axis=1)
        return inside, tangent


_TRACTS = {"straight": StraightTract, "arc": ArcTract}


@dataclass
class PhantomSpec:
    shape: tuple = (40, 40, 20)
    tracts: list = field(default_factory=list)
    lambda1: float = 2.0e-3
    lambda2: float = 0.5e-3
    n_directions: int = 60
    bvalue: float = 1000.0
    n_baselines: int = 1
    s0: float = 100.0
    isotropic_background: bool = False
    background_md: float = 1.0e-3

    def scheme(self) -> GradientScheme:
        return GradientScheme.from_directions(
            gradient_directions(self.n_directions), self.bvalue, self.n_baselines
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shape"] = list(self.shape)
        d["tracts"] = [
            {"type": t.kind, **{k: (list(v) if isinstance(v, tuple) else v)
                                for k, v in asdict(t).items() if k != "kind"}}
            for t in self.tracts
        ]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        d = dict(d)
        tracts = []
        for entry in d.pop("tracts", []):
            entry = dict(entry)
            kind = entry.pop("type", None)
            if kind not in _TRACTS:
                raise SpecError(f"unknown tract type {kind!r}")
            for k in ("center", "direction"):
                if k in entry:
                    entry[k] = tuple(float(x) for x in entry[k])
            try:
                tracts.append(_TRACTS[kind](**entry))
            except TypeError as exc:
                raise SpecError(f"bad {kind} tract: {exc}") from None
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise SpecError(f"unknown spec keys: {sorted(unknown)}")
        if "shape" in d:
            d["shape"] = tuple(int(x) for x in d["shape"])
        return cls(tracts=tracts, **d)


def gradient_directions(n: int) -> np.ndarray:
    """``n`` well-spread unit vectors on the upper hemisphere (spherical Fibonacci)."""
    i = np.arange(n) + 0.5
    z = 1.0 - i / n
    r = np.sqrt(1.0 - z * z)
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def default_spec() -> PhantomSpec:
    """Five tracts on a 40 x 40 x 20 grid with two- and three-way crossings."""
    tracts = [
        StraightTract((20.0, 12.0, 10.0), (1.0, 0.0, 0.0), thickness=5, height=5),
        StraightTract((13.0, 20.0, 10.0), (0.0, 1.0, 0.0), thickness=5, height=5),
        StraightTract((13.0, 12.0, 10.0), (0.0, 0.0, 1.0), thickness=5, height=5),
        StraightTract((27.0, 12.0, 10.0), (1.0, 1.0, 0.0), thickness=5, height=5),
        ArcTract((13.0, 12.0, 10.0), radius=19.0, start_deg=0.0, end_deg=90.0,
                 thickness=5, height=5),
    ]
    return PhantomSpec(tracts=tracts)


def save_spec(path, spec: PhantomSpec):
    Path(path).write_text(yaml.safe_dump(spec.to_dict(), sort_keys=False))


def load_spec(path) -> PhantomSpec:
    data = yaml.safe_load(Path(path).read_text())
    if not isinstance(data, dict):
        raise SpecError(f"{path}: expected a mapping at top level")
    return PhantomSpec.from_dict(data)


@dataclass
class GroundTruth:
    """True FOs per voxel: ``fos[x, y, z, :count]`` with equal fractions."""

    fos: np.ndarray  # (X, Y, Z, 3, 3)
    count: np.ndarray  # (X, Y, Z)
    tracts: np.ndarray  # (X, Y, Z) bitmask of covering tracts

    @property
    def shape(self):
        return self.count.shape

    @property
    def mask(self):
        return self.count > 0

    def fo_set(self, voxel) -> np.ndarray:
        v = tuple(voxel)
        return self.fos[v][: self.count[v]]

    def fractions(self, voxel) -> np.ndarray:
        n = self.count[tuple(voxel)]
        return np.full(n, 1.0 / n) if n else np.zeros(0)


def rasterize(spec: PhantomSpec) -> GroundTruth:
    shape = tuple(spec.shape)
    grid = np.indices(shape).reshape(3, -1).T.astype(float)
    P = len(grid)
    fos = np.zeros((P, MAX_FOS, 3))
    count = np.zeros(P, dtype=np.int64)
    bits = np.zeros(P, dtype=np.int64)
    cos_merge = np.cos(np.radians(MERGE_DEG))
    for t_i, tract in enumerate(spec.tracts):
        inside, dirs = tract.cover(grid)
        bits[inside] |= 1 << t_i
        for p in np.flatnonzero(inside):
            d = canonicalize(dirs[p])[0]
            n = count[p]
            if n and np.any(np.abs(fos[p, :n] @ d) >= cos_merge):
                continue
            if n >= MAX_FOS:
                raise SpecError(
                    f"more than {MAX_FOS} tracts overlap at voxel {tuple(grid[p].astype(int))}"
                )
            fos[p, n] = d
            count[p] = n + 1
    return GroundTruth(fos.reshape(shape + (MAX_FOS, 3)), count.reshape(shape),
                       bits.reshape(shape))


def synthesize(truth: GroundTruth, spec: PhantomSpec, scheme: GradientScheme | None = None):
    """Noise-free signals ``S0 sum_j f_j exp(-b q^T D_j q)``, shape ``(X, Y, Z, K_total)``."""
    scheme = spec.scheme() if scheme is None else scheme
    b = scheme.bvals
    q = scheme.bvecs
    lam1, lam2 = spec.lambda1, spec.lambda2
    out = np.zeros(truth.shape + (len(b),))
    occ = np.argwhere(truth.count > 0)
    for v in occ:
        v = tuple(v)
        n = truth.count[v]
        dots = q @ truth.fos[v][:n].T  # (K, n)
        att = np.exp(-b[:, None] * (lam2 + (lam1 - lam2) * dots**2))
        out[v] = spec.s0 * att.mean(axis=1)
    if spec.isotropic_background:
        out[truth.count == 0] = spec.s0 * np.exp(-b * spec.background_md)
    return out


def add_rician(volume, snr, seed=0, s0=1.0):
    """``sqrt((S + n1)^2 + n2^2)`` with ``n1, n2 ~ N(0, (s0 / snr)^2)``.

    Every voxel draws from its own counter-based stream keyed by
    ``(seed, voxel index)``; within it, measurement ``k`` consumes normals
    ``2k`` and ``2k + 1``. A measurement's noise therefore depends only on
    ``(seed, voxel, k)``, not on scheduling or on how many measurements
    follow. ``snr`` of 0 or ``None`` returns the input unchanged.
    """
    vol = np.asarray(volume, dtype=float)
    if not snr:
        return vol.copy()
    if snr < 0:
        raise ValueError("snr must be positive")
    sigma = s0 / snr
    flat = vol.reshape(-1, vol.shape[-1])
    K = flat.shape[1]
    out = np.empty_like(flat)
    key = int(seed) & 0xFFFFFFFFFFFFFFFF
    for i in range(len(flat)):
        gen = np.random.Generator(np.random.Philox(key=key, counter=[0, 0, i, 0]))
        n = gen.standard_normal((K, 2)) * sigma
        out[i] = np.sqrt((flat[i] + n[:, 0]) ** 2 + n[:, 1] ** 2)
    return out.reshape(vol.shape)


def make_phantom(spec: PhantomSpec | None = None, snr=None, seed=0):
    """Ground truth, gradient scheme and (optionally noisy) signal volume."""
    spec = default_spec() if spec is None else spec
    truth = rasterize(spec)
    scheme = spec.scheme()
    clean = synthesize(truth, spec, scheme)
    noisy = add_rician(clean, snr, seed, spec.s0)
    return truth, scheme, noisy
