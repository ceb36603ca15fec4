"""Coordinate → feature transforms with analytic Jacobians.

Coordinates are either torsion angles (torus systems) or flattened Cartesian
triples (point-cloud systems, atom ``i`` occupies ``q[3i:3i+3]``).
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal, Sequence

import numpy as np

from cvforge.errors import (
    DegenerateFeatureError,
    DegenerateGeometryError,
    InvalidInputError,
)

_GEOMETRY_TOL = 1e-12


def wrap_angle(theta):
    """Map angles onto (−π, π]."""
    return np.pi - np.mod(np.pi - np.asarray(theta, dtype=float), 2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class Frame:
    coords: np.ndarray
    time_index: int = 0

    @classmethod
    def from_angles(cls, angles: Sequence[float], time_index: int = 0) -> "Frame":
        return cls(wrap_angle(np.asarray(angles, dtype=float)), time_index)


@dataclass(frozen=True)
class SinCos:
    index: int
    kind: Literal["sincos"] = "sincos"
    width = 2


@dataclass(frozen=True)
class ContactDistance:
    i: int
    j: int
    kind: Literal["contact_distance"] = "contact_distance"
    width = 1


@dataclass(frozen=True)
class PseudoDihedralCos:
    a: int
    b: int
    c: int
    d: int
    kind: Literal["pseudo_dihedral_cos"] = "pseudo_dihedral_cos"
    width = 1


@dataclass(frozen=True)
class Raw:
    index: int
    kind: Literal["raw"] = "raw"
    width = 1


Transform = SinCos | ContactDistance | PseudoDihedralCos | Raw


@dataclass(frozen=True, eq=False)
class StandardScaler:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        if np.any(self.std <= 0):
            column = int(np.flatnonzero(self.std <= 0)[0])
            raise DegenerateFeatureError(column)


@dataclass(frozen=True)
class _Plan:
    sincos_idx: np.ndarray
    sin_pos: np.ndarray
    cos_pos: np.ndarray
    raw_idx: np.ndarray
    raw_pos: np.ndarray
    pair_idx: np.ndarray
    pair_pos: np.ndarray
    quad_idx: np.ndarray
    quad_pos: np.ndarray


@dataclass(frozen=True, eq=False)
class FeatureSpec:
    transforms: tuple[Transform, ...]
    n_coords: int
    scaler: StandardScaler | None = field(default=None)

    def __post_init__(self):
        if not self.transforms:
            raise InvalidInputError("Feature spec needs at least one transform")
        n_atoms = self.n_coords // 3
        for t in self.transforms:
            if isinstance(t, (SinCos, Raw)):
                _check_index(t.index, self.n_coords, "coordinate")
            else:
                if self.n_coords % 3:
                    raise InvalidInputError(
                        f"{t.kind} needs Cartesian triples, got {self.n_coords} coordinates"
                    )
                atoms = (t.i, t.j) if isinstance(t, ContactDistance) else (t.a, t.b, t.c, t.d)
                for atom in atoms:
                    _check_index(atom, n_atoms, "atom")
                if len(set(atoms)) != len(atoms):
                    raise DegenerateGeometryError(f"Repeated atom index in {t}")
        if self.scaler is not None and len(self.scaler.mean) != self.width:
            raise InvalidInputError(
                f"Scaler has {len(self.scaler.mean)} features, spec produces {self.width}"
            )

    @property
    def width(self) -> int:
        return sum(t.width for t in self.transforms)

    @property
    def labels(self) -> list[str]:
        names = []
        for t in self.transforms:
            match t:
                case SinCos(index=k):
                    names += [f"sin_q{k}", f"cos_q{k}"]
                case Raw(index=k):
                    names.append(f"q{k}")
                case ContactDistance(i=i, j=j):
                    names.append(f"d_{i}_{j}")
                case PseudoDihedralCos(a=a, b=b, c=c, d=d):
                    names.append(f"cosdih_{a}_{b}_{c}_{d}")
        return names

    def with_scaler(self, scaler: StandardScaler | None) -> "FeatureSpec":
        return FeatureSpec(self.transforms, self.n_coords, scaler)

    @cached_property
    def _plan(self) -> _Plan:
        sincos_idx, sin_pos, cos_pos = [], [], []
        raw_idx, raw_pos = [], []
        pair_idx, pair_pos = [], []
        quad_idx, quad_pos = [], []
        pos = 0
        for t in self.transforms:
            match t:
                case SinCos(index=k):
                    sincos_idx.append(k)
                    sin_pos.append(pos)
                    cos_pos.append(pos + 1)
                case Raw(index=k):
                    raw_idx.append(k)
                    raw_pos.append(pos)
                case ContactDistance(i=i, j=j):
                    pair_idx.append((i, j))
                    pair_pos.append(pos)
                case PseudoDihedralCos(a=a, b=b, c=c, d=d):
                    quad_idx.append((a, b, c, d))
                    quad_pos.append(pos)
            pos += t.width

        def ints(values, shape=(0,)):
            return np.array(values, dtype=int) if values else np.zeros(shape, dtype=int)

        return _Plan(
            ints(sincos_idx),
            ints(sin_pos),
            ints(cos_pos),
            ints(raw_idx),
            ints(raw_pos),
            ints(pair_idx, (0, 2)),
            ints(pair_pos),
            ints(quad_idx, (0, 4)),
            ints(quad_pos),
        )

    def evaluate(
        self, q: np.ndarray, jacobian: bool = True
    ) -> tuple[np.ndarray, np.ndarray | None]:
        """Scaled feature vector and, optionally, dX/dq."""
        q = np.asarray(q, dtype=float)
        if q.shape != (self.n_coords,):
            raise InvalidInputError(
                f"Expected {self.n_coords} coordinates, got shape {q.shape}"
            )
        plan = self._plan
        x = np.empty(self.width)
        jac = np.zeros((self.width, self.n_coords)) if jacobian else None

        if plan.sincos_idx.size:
            theta = q[plan.sincos_idx]
            s, c = np.sin(theta), np.cos(theta)
            x[plan.sin_pos] = s
            x[plan.cos_pos] = c
            if jac is not None:
                jac[plan.sin_pos, plan.sincos_idx] = c
                jac[plan.cos_pos, plan.sincos_idx] = -s

        if plan.raw_idx.size:
            x[plan.raw_pos] = q[plan.raw_idx]
            if jac is not None:
                jac[plan.raw_pos, plan.raw_idx] = 1.0

        if plan.pair_idx.size or plan.quad_idx.size:
            xyz = q.reshape(-1, 3)
            cols = np.arange(3)

            if plan.pair_idx.size:
                i, j = plan.pair_idx[:, 0], plan.pair_idx[:, 1]
                diff = xyz[i] - xyz[j]
                dist = np.linalg.norm(diff, axis=1)
                x[plan.pair_pos] = dist
                if jac is not None:
                    if np.any(dist == 0.0):
                        raise DegenerateGeometryError(
                            "Contact distance gradient undefined for coincident atoms"
                        )
                    g = diff / dist[:, None]
                    rows = plan.pair_pos[:, None]
                    jac[rows, 3 * i[:, None] + cols] += g
                    jac[rows, 3 * j[:, None] + cols] -= g

            if plan.quad_idx.size:
                pts = [xyz[plan.quad_idx[:, k]] for k in range(4)]
                cosine, grads = _dihedral_cos(*pts)
                x[plan.quad_pos] = cosine
                if jac is not None:
                    rows = plan.quad_pos[:, None]
                    for k in range(4):
                        jac[rows, 3 * plan.quad_idx[:, k][:, None] + cols] += grads[k]

        if self.scaler is not None:
            x = (x - self.scaler.mean) / self.scaler.std
            if jac is not None:
                jac /= self.scaler.std[:, None]
        return x, jac


def _check_index(index: int, bound: int, what: str):
    if not 0 <= index < bound:
        raise InvalidInputError(f"{what.capitalize()} index {index} out of range [0, {bound})")


def _dihedral_cos(p0, p1, p2, p3):
    """Cosine of the torsion p0-p1-p2-p3 and its gradient w.r.t. each point.

    All inputs have shape (k, 3).
    """
    b1, b2, b3 = p1 - p0, p2 - p1, p3 - p2
    m = np.cross(b1, b2)
    n = np.cross(b2, b3)
    m_norm = np.linalg.norm(m, axis=1)
    n_norm = np.linalg.norm(n, axis=1)
    scale = np.linalg.norm(b2, axis=1) * np.maximum(
        np.linalg.norm(b1, axis=1), np.linalg.norm(b3, axis=1)
    )
    if np.any(m_norm <= _GEOMETRY_TOL * scale) or np.any(n_norm <= _GEOMETRY_TOL * scale) or np.any(scale == 0):
        raise DegenerateGeometryError("Collinear atoms leave the torsion plane undefined")

    mn = m_norm * n_norm
    cosine = np.einsum("ij,ij->i", m, n) / mn
    grad_m = n / mn[:, None] - (cosine / m_norm**2)[:, None] * m
    grad_n = m / mn[:, None] - (cosine / n_norm**2)[:, None] * n
    g1 = np.cross(b2, grad_m)
    g2 = np.cross(grad_m, b1) + np.cross(b3, grad_n)
    g3 = np.cross(grad_n, b2)
    return np.clip(cosine, -1.0, 1.0), (-g1, g1 - g2, g2 - g3, g3)


def _coords(frame: Frame | np.ndarray) -> np.ndarray:
    return np.asarray(frame.coords if isinstance(frame, Frame) else frame, dtype=float)


def sincos_features(angles) -> np.ndarray:
    theta = np.atleast_1d(np.asarray(angles, dtype=float))
    if not np.all(np.isfinite(theta)):
        raise InvalidInputError("Angles must be finite")
    out = np.empty(2 * theta.size)
    out[0::2] = np.sin(theta)
    out[1::2] = np.cos(theta)
    return out


def contact_distance(frame: Frame | np.ndarray, i: int, j: int) -> float:
    if i == j:
        raise DegenerateGeometryError(f"Contact pair ({i}, {j}) is degenerate")
    xyz = _coords(frame).reshape(-1, 3)
    for atom in (i, j):
        _check_index(atom, len(xyz), "atom")
    return float(np.linalg.norm(xyz[i] - xyz[j]))


def pseudo_dihedral_cos(frame: Frame | np.ndarray, a: int, b: int, c: int, d: int) -> float:
    xyz = _coords(frame).reshape(-1, 3)
    for atom in (a, b, c, d):
        _check_index(atom, len(xyz), "atom")
    cosine, _ = _dihedral_cos(*(xyz[[k]] for k in (a, b, c, d)))
    return float(cosine[0])


def fit_scaler(data: np.ndarray, labels: Sequence[str] | None = None) -> StandardScaler:
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[0] < 2:
        raise InvalidInputError("Scaler needs a matrix with at least 2 rows")
    if not np.all(np.isfinite(data)):
        raise InvalidInputError("Feature matrix contains non-finite values")
    mean = data.mean(axis=0)
    std = data.std(axis=0)
    constant = std <= np.finfo(float).eps * np.maximum(1.0, np.abs(mean))
    if np.any(constant):
        column = int(np.flatnonzero(constant)[0])
        raise DegenerateFeatureError(column, labels[column] if labels else None)
    return StandardScaler(mean, std)


def apply_scaler(scaler: StandardScaler, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != len(scaler.mean):
        raise InvalidInputError(
            f"Scaler expects {len(scaler.mean)} features, got {x.shape[-1]}"
        )
    return (x - scaler.mean) / scaler.std


def invert_scaler(scaler: StandardScaler, x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=float) * scaler.std + scaler.mean


def feature_jacobian(spec: FeatureSpec, frame: Frame | np.ndarray) -> np.ndarray:
    _, jac = spec.evaluate(_coords(frame), jacobian=True)
    return jac


def featurize(spec: FeatureSpec, frames: np.ndarray) -> np.ndarray:
    """Scaled features for one coordinate vector or a matrix of them."""
    frames = np.asarray(frames, dtype=float)
    if frames.ndim == 1:
        return spec.evaluate(frames, jacobian=False)[0]
    return np.stack([spec.evaluate(q, jacobian=False)[0] for q in frames])


def torsion_feature_spec(n_angles: int) -> FeatureSpec:
    return FeatureSpec(tuple(SinCos(k) for k in range(n_angles)), n_angles)


def chain_feature_spec(n_atoms: int, min_separation: int = 3) -> FeatureSpec:
    """Contact distances for atoms at least ``min_separation`` apart in sequence
    plus the torsion cosine of every four consecutive atoms."""
    contacts = [
        ContactDistance(i, j)
        for i in range(n_atoms)
        for j in range(i + min_separation, n_atoms)
    ]
    torsions = [PseudoDihedralCos(k, k + 1, k + 2, k + 3) for k in range(n_atoms - 3)]
    return FeatureSpec(tuple(contacts + torsions), 3 * n_atoms)
