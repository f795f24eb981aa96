"""Real divergence-free Stokes eigenbasis of the unit 3-torus.

Every basis function is either a constant unit vector ``e_axis`` or a plane
wave ``sqrt(2) * u * cos(2 pi k.x)`` / ``sqrt(2) * u * sin(2 pi k.x)`` with
``u . k = 0`` and ``|u| = 1``.  Wavevectors live on the canonical half lattice
(first nonzero component positive), so the family is orthonormal in L^2.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

TWO_PI = 2.0 * math.pi
FOUR_PI_SQ = 4.0 * math.pi**2

WAVE = "wave"
CONSTANT = "constant"
COS = "cos"
SIN = "sin"

# entries of the trilinear table below this magnitude are dropped
TABLE_CUTOFF = 1e-14


class AliasingError(ValueError):
    """Physical grid too coarse to represent the field without aliasing."""


@dataclass(frozen=True, order=False)
class ModeIndex:
    kind: str
    k: tuple[int, int, int] = (0, 0, 0)
    pol: int = 0
    parity: str = COS
    axis: int = 0

    @classmethod
    def wave(cls, k: Sequence[int], pol: int, parity: str) -> "ModeIndex":
        k = tuple(int(c) for c in k)
        if not is_canonical(k):
            raise ValueError(f"wavevector {k} is not in the canonical half lattice")
        if pol not in (0, 1) or parity not in (COS, SIN):
            raise ValueError(f"bad polarization/parity ({pol}, {parity})")
        return cls(WAVE, k, pol, parity, 0)

    @classmethod
    def constant(cls, axis: int) -> "ModeIndex":
        if axis not in (0, 1, 2):
            raise ValueError(f"axis must be 0, 1 or 2, got {axis}")
        return cls(CONSTANT, (0, 0, 0), 0, COS, axis)

    @property
    def is_wave(self) -> bool:
        return self.kind == WAVE

    @property
    def k2(self) -> int:
        return sum(c * c for c in self.k)

    @property
    def vector(self) -> np.ndarray:
        """Unit polarization vector (the constant direction for constant modes)."""
        if self.is_wave:
            return polarization(self.k)[self.pol]
        v = np.zeros(3)
        v[self.axis] = 1.0
        return v

    def sort_key(self) -> tuple:
        if not self.is_wave:
            return (0, 0, (0, 0, 0), self.axis, 0)
        return (1, self.k2, self.k, self.pol, 0 if self.parity == COS else 1)


def is_canonical(k: Sequence[int]) -> bool:
    """Lexicographic-positive rule: the first nonzero component is positive."""
    for c in k:
        if c != 0:
            return c > 0
    return False


def canonicalize(k: Sequence[int]) -> tuple[tuple[int, int, int], int]:
    """Return (canonical representative, sign) with k = sign * representative."""
    k = tuple(int(c) for c in k)
    if is_canonical(k):
        return k, 1
    return tuple(-c for c in k), -1


@lru_cache(maxsize=None)
def _polarization_cached(k: tuple[int, int, int]) -> tuple[tuple[float, ...], tuple[float, ...]]:
    kv = np.asarray(k, dtype=float)
    a = np.array([0.0, 0.0, 1.0])
    if kv[0] == 0 and kv[1] == 0:
        a = np.array([1.0, 0.0, 0.0])
    u1 = np.cross(kv, a)
    u1 /= np.linalg.norm(u1)
    u2 = np.cross(kv, u1)
    u2 /= np.linalg.norm(u2)
    return tuple(u1), tuple(u2)


def polarization(k: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """The two fixed orthonormal vectors perpendicular to ``k``.

    ``u1 = normalize(k x a)`` with ``a = e_z`` (``e_x`` when ``k`` is parallel
    to ``e_z``) and ``u2 = normalize(k x u1)``.
    """
    u1, u2 = _polarization_cached(tuple(int(c) for c in k))
    return np.array(u1), np.array(u2)


def half_lattice(m: int) -> list[tuple[int, int, int]]:
    """Canonical wavevectors with 0 < |k| <= m, sorted by (|k|^2, k)."""
    if m < 0:
        raise ValueError("m must be >= 0")
    out = []
    r = range(-m, m + 1)
    for k in itertools.product(r, r, r):
        k2 = k[0] ** 2 + k[1] ** 2 + k[2] ** 2
        if 0 < k2 <= m * m and is_canonical(k):
            out.append((k2, k))
    out.sort()
    return [k for _, k in out]


def enumerate_modes(m: int) -> list[ModeIndex]:
    """Deterministic enumeration of B_m: constants first, then wave modes."""
    modes = [ModeIndex.constant(a) for a in range(3)]
    for k in half_lattice(m):
        for pol in (0, 1):
            for parity in (COS, SIN):
                modes.append(ModeIndex(WAVE, k, pol, parity, 0))
    return modes


def eigenvalue(mode: ModeIndex) -> float:
    """Stokes eigenvalue 4 pi^2 |k|^2 (zero for constant modes)."""
    return FOUR_PI_SQ * mode.k2 if mode.is_wave else 0.0


def leray_project(k: Sequence[float], v: Sequence[float]) -> np.ndarray:
    """Apply the Fourier-space Leray projector ``I - k k^T / |k|^2`` to ``v``."""
    k = np.asarray(k, dtype=float)
    v = np.asarray(v, dtype=float)
    k2 = float(k @ k)
    if k2 == 0.0:
        raise ValueError("Leray projection undefined at k = 0")
    return v - k * (k @ v) / k2


def leray_matrix(k: Sequence[float]) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    k2 = float(k @ k)
    if k2 == 0.0:
        raise ValueError("Leray projection undefined at k = 0")
    return np.eye(3) - np.outer(k, k) / k2


class Basis:
    """An ordered, orthonormal family of divergence-free modes.

    ``Basis.galerkin(m)`` is the standard B_m; arbitrary mode lists are allowed
    (the blowup experiment uses an anisotropic set).
    """

    def __init__(self, modes: Iterable[ModeIndex], m: int | None = None):
        self.modes: tuple[ModeIndex, ...] = tuple(modes)
        if len(set(self.modes)) != len(self.modes):
            raise ValueError("duplicate modes in basis")
        n = len(self.modes)
        self.kvec = np.array([md.k for md in self.modes], dtype=np.int64).reshape(n, 3)
        self.vectors = np.array([md.vector for md in self.modes]).reshape(n, 3)
        self.is_wave = np.array([md.is_wave for md in self.modes], dtype=bool)
        self.is_sin = np.array([md.is_wave and md.parity == SIN for md in self.modes], dtype=bool)
        self.amplitude = np.where(self.is_wave, math.sqrt(2.0), 1.0)
        self.k2 = np.sum(self.kvec**2, axis=1)
        self.eigenvalues = FOUR_PI_SQ * self.k2.astype(float)
        self.kmax = int(np.max(np.abs(self.kvec))) if n else 0
        self.m = m if m is not None else int(math.ceil(math.sqrt(self.k2.max()))) if n else 0
        self._index = {md: i for i, md in enumerate(self.modes)}

    @staticmethod
    @lru_cache(maxsize=None)
    def galerkin(m: int) -> "Basis":
        return Basis(enumerate_modes(m), m)

    def __len__(self) -> int:
        return len(self.modes)

    def __iter__(self):
        return iter(self.modes)

    def __eq__(self, other) -> bool:
        return isinstance(other, Basis) and self.modes == other.modes

    def __hash__(self) -> int:
        return hash(self.modes)

    def __repr__(self) -> str:
        return f"Basis(m={self.m}, size={len(self)})"

    def index(self, mode: ModeIndex) -> int:
        return self._index[mode]

    def find(self, mode: ModeIndex) -> int | None:
        return self._index.get(mode)

    def zeros(self) -> "SpectralField":
        return SpectralField(self, np.zeros(len(self)))

    def unit(self, mode: ModeIndex | int, value: float = 1.0) -> "SpectralField":
        i = mode if isinstance(mode, (int, np.integer)) else self.index(mode)
        c = np.zeros(len(self))
        c[i] = value
        return SpectralField(self, c)

    def restrict(self, coeffs: np.ndarray, target: "Basis") -> np.ndarray:
        """Coefficients of ``target`` modes (zero where absent here)."""
        out = np.zeros(coeffs.shape[:-1] + (len(target),))
        for j, md in enumerate(target.modes):
            i = self.find(md)
            if i is not None:
                out[..., j] = coeffs[..., i]
        return out


@dataclass
class SpectralField:
    """Real coefficient vector over a basis; represents a divergence-free field."""

    basis: Basis
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (len(self.basis),):
            raise ValueError(
                f"expected {len(self.basis)} coefficients, got shape {self.coeffs.shape}"
            )

    @classmethod
    def zeros(cls, m: int) -> "SpectralField":
        return Basis.galerkin(m).zeros()

    @property
    def m(self) -> int:
        return self.basis.m

    def copy(self) -> "SpectralField":
        return SpectralField(self.basis, self.coeffs.copy())

    def _check(self, other: "SpectralField") -> None:
        if other.basis is not self.basis and other.basis != self.basis:
            raise ValueError("fields live on different bases")

    def __add__(self, other: "SpectralField") -> "SpectralField":
        self._check(other)
        return SpectralField(self.basis, self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        self._check(other)
        return SpectralField(self.basis, self.coeffs - other.coeffs)

    def __mul__(self, a: float) -> "SpectralField":
        return SpectralField(self.basis, a * self.coeffs)

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralField":
        return SpectralField(self.basis, -self.coeffs)

    def dot(self, other: "SpectralField") -> float:
        """L^2 inner product (Euclidean on coefficients by orthonormality)."""
        self._check(other)
        return float(self.coeffs @ other.coeffs)


def inner(u: SpectralField, v: SpectralField) -> float:
    return u.dot(v)


def norm(u: SpectralField, kind: str = "H", r: float = 1.0) -> float:
    """Spectral norms: ``H``, ``V`` (homogeneous H^1 seminorm), ``H^r``, ``H^-r``.

    ``H^r`` uses weights ``1 + lambda^r`` and ``H^-r`` uses ``(1 + lambda^r)^-1``.
    """
    if r < 0:
        raise ValueError("r must be >= 0; use kind 'H^-r' for negative orders")
    c2 = u.coeffs**2
    lam = u.basis.eigenvalues
    if kind == "H":
        return float(math.sqrt(c2.sum()))
    if kind == "V":
        return float(math.sqrt(lam @ c2))
    if kind == "H^r":
        return float(math.sqrt(((1.0 + lam**r) * c2).sum()))
    if kind == "H^-r":
        return float(math.sqrt((c2 / (1.0 + lam**r)).sum()))
    raise ValueError(f"unknown norm kind {kind!r}")


def sobolev_weights(basis: Basis, r: float) -> np.ndarray:
    """Per-mode weights ``1 + lambda^r`` (``r`` may be negative: inverse weight)."""
    lam = basis.eigenvalues
    if r >= 0:
        return 1.0 + lam**r
    return 1.0 / (1.0 + lam ** (-r))


# --- trilinear coefficients -------------------------------------------------

def _fourier_pair(mode: ModeIndex) -> list[tuple[int, complex]]:
    """Exponential expansion of the scalar profile: [(sign, coefficient)]."""
    if not mode.is_wave:
        return [(1, 1.0 + 0j)]
    a = math.sqrt(2.0)
    if mode.parity == COS:
        return [(1, a / 2), (-1, a / 2)]
    return [(1, a / 2j), (-1, -a / 2j)]


def trilinear_coeff(mode: ModeIndex, mode1: ModeIndex, mode2: ModeIndex) -> float:
    """``B_{z,z1,z2} = <(e_{z1} . grad) e_{z2}, e_z>`` by exact exponential sums."""
    if not mode2.is_wave:
        return 0.0
    k = np.array(mode.k)
    k1 = np.array(mode1.k)
    k2 = np.array(mode2.k)
    u, u1, u2 = mode.vector, mode1.vector, mode2.vector
    adv = TWO_PI * float(u1 @ k2)
    proj = float(u2 @ u)
    if adv == 0.0 or proj == 0.0:
        return 0.0
    total = 0j
    for s, a in _fourier_pair(mode):
        for s1, a1 in _fourier_pair(mode1):
            for s2, a2 in _fourier_pair(mode2):
                if np.all(s1 * k1 + s2 * k2 + s * k == 0):
                    total += a * a1 * a2 * 1j * s2
    return float((total * adv * proj).real)


def _exp_coefficients(basis: Basis) -> np.ndarray:
    """(n, 2) complex coefficients of exp(+i theta), exp(-i theta) per mode."""
    a = basis.amplitude
    alpha = np.zeros((len(basis), 2), dtype=complex)
    cos_ = basis.is_wave & ~basis.is_sin
    alpha[cos_, 0] = a[cos_] / 2
    alpha[cos_, 1] = a[cos_] / 2
    alpha[basis.is_sin, 0] = a[basis.is_sin] / 2j
    alpha[basis.is_sin, 1] = -a[basis.is_sin] / 2j
    alpha[~basis.is_wave, 0] = 1.0
    return alpha


def _linear_codes(basis: Basis) -> np.ndarray:
    M = 6 * max(basis.kmax, 1) + 3
    k = basis.kvec
    return k[:, 0] * M * M + k[:, 1] * M + k[:, 2]


def trilinear_tensor(basis: Basis, rows: Sequence[int] | None = None) -> np.ndarray:
    """Dense ``B[z, z1, z2]`` for the given output rows (all rows by default)."""
    rows = np.arange(len(basis)) if rows is None else np.asarray(rows)
    alpha = _exp_coefficients(basis)
    code = _linear_codes(basis)
    U, K = basis.vectors, basis.kvec.astype(float)
    adv = TWO_PI * (U @ K.T)  # adv[i1, i2] = 2 pi u1 . k2
    proj = basis.vectors[rows] @ U.T  # proj[i, i2] = u . u2
    out = np.zeros((len(rows), len(basis), len(basis)), dtype=complex)
    signs = (1, -1)
    for si, s in enumerate(signs):
        for s1i, s1 in enumerate(signs):
            for s2i, s2 in enumerate(signs):
                hit = (
                    s * code[rows][:, None, None]
                    + s1 * code[None, :, None]
                    + s2 * code[None, None, :]
                ) == 0
                if not hit.any():
                    continue
                coef = (
                    alpha[rows, si][:, None, None]
                    * alpha[None, :, s1i, None]
                    * alpha[None, None, :, s2i]
                    * (1j * s2)
                )
                out += np.where(hit, coef, 0.0)
    out *= adv[None, :, :] * proj[:, None, :]
    return out.real


class TrilinearTable:
    """Sparse ``(z, z1, z2) -> B`` plus a fast evaluator of the quadratic form."""

    def __init__(self, basis: Basis, rows, cols1, cols2, values):
        self.basis = basis
        self.rows = np.asarray(rows, dtype=np.int64)
        self.cols1 = np.asarray(cols1, dtype=np.int64)
        self.cols2 = np.asarray(cols2, dtype=np.int64)
        self.values = np.asarray(values, dtype=float)
        n = len(basis)
        # symmetrize over (z1, z2): N_z = sum_{p1 <= p2} S[p, z] c_p1 c_p2
        lo = np.minimum(self.cols1, self.cols2)
        hi = np.maximum(self.cols1, self.cols2)
        pair_code = lo * n + hi
        uniq, inv = np.unique(pair_code, return_inverse=True)
        self.pair1 = uniq // n
        self.pair2 = uniq % n
        self._pair_op = sp.csr_matrix(
            (self.values, (inv, self.rows)), shape=(len(uniq), n)
        )
        self._pair_op.sum_duplicates()

    @property
    def m(self) -> int:
        return self.basis.m

    @property
    def nnz(self) -> int:
        return len(self.values)

    def entries(self) -> dict[tuple[int, int, int], float]:
        return {
            (int(a), int(b), int(c)): float(v)
            for a, b, c, v in zip(self.rows, self.cols1, self.cols2, self.values)
        }

    def dense(self) -> np.ndarray:
        n = len(self.basis)
        out = np.zeros((n, n, n))
        np.add.at(out, (self.rows, self.cols1, self.cols2), self.values)
        return out

    def apply(self, coeffs: np.ndarray) -> np.ndarray:
        """Quadratic term ``sum B[z, z1, z2] c_z1 c_z2`` for one or many states."""
        c = np.asarray(coeffs, dtype=float)
        products = c[..., self.pair1] * c[..., self.pair2]
        if c.ndim == 1:
            return self._pair_op.T @ products
        flat = products.reshape(-1, products.shape[-1])
        return (flat @ self._pair_op).reshape(c.shape[:-1] + (len(self.basis),))

    def bilinear(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """``sum B[z, z1, z2] a_z1 b_z2`` (one state each)."""
        out = np.zeros(len(self.basis))
        np.add.at(out, self.rows, self.values * a[self.cols1] * b[self.cols2])
        return out


_TABLES: dict[Basis, TrilinearTable] = {}


def build_table(basis: Basis | int, chunk: int = 32) -> TrilinearTable:
    """Precompute (and cache) the sparse trilinear table of a basis."""
    if isinstance(basis, (int, np.integer)):
        basis = Basis.galerkin(int(basis))
    cached = _TABLES.get(basis)
    if cached is not None:
        return cached
    rows, c1, c2, vals = [], [], [], []
    n = len(basis)
    for start in range(0, n, chunk):
        idx = np.arange(start, min(start + chunk, n))
        block = trilinear_tensor(basis, idx)
        r, a, b = np.nonzero(np.abs(block) > TABLE_CUTOFF)
        rows.append(idx[r])
        c1.append(a)
        c2.append(b)
        vals.append(block[r, a, b])
    table = TrilinearTable(
        basis, np.concatenate(rows), np.concatenate(c1), np.concatenate(c2), np.concatenate(vals)
    )
    _TABLES[basis] = table
    return table


def nonlinear_term(u: SpectralField, table: TrilinearTable) -> SpectralField:
    """Coefficients of ``P_m P((u . grad) u)``."""
    if u.basis != table.basis:
        raise ValueError("field and table bases differ")
    return SpectralField(u.basis, table.apply(u.coeffs))


# --- physical space ---------------------------------------------------------

def _grid_shape(n) -> tuple[int, int, int]:
    if np.isscalar(n):
        return (int(n),) * 3
    shape = tuple(int(v) for v in n)
    if len(shape) != 3:
        raise ValueError("grid must be an int or a 3-tuple")
    return shape


def mode_profiles(basis: Basis, n) -> np.ndarray:
    """Scalar profiles ``a * cos/sin(2 pi k.x)`` of every mode on the grid."""
    shape = _grid_shape(n)
    axes = [np.arange(s) / s for s in shape]
    X = np.meshgrid(*axes, indexing="ij")
    out = np.empty((len(basis),) + shape)
    for i, md in enumerate(basis.modes):
        if not md.is_wave:
            out[i] = 1.0
            continue
        theta = TWO_PI * (md.k[0] * X[0] + md.k[1] * X[1] + md.k[2] * X[2])
        out[i] = math.sqrt(2.0) * (np.sin(theta) if md.parity == SIN else np.cos(theta))
    return out


def evaluate_physical(u: SpectralField, n) -> np.ndarray:
    """Synthesize ``u(x) = sum c e(x)`` on a uniform grid; shape ``(*grid, 3)``."""
    shape = _grid_shape(n)
    kmax = np.max(np.abs(u.basis.kvec), axis=0) if len(u.basis) else np.zeros(3)
    for axis in range(3):
        if shape[axis] < 2 * int(kmax[axis]) + 2:
            raise AliasingError(
                f"grid of {shape[axis]} points along axis {axis} cannot resolve "
                f"wavenumber {int(kmax[axis])} (need >= {2 * int(kmax[axis]) + 2})"
            )
    prof = mode_profiles(u.basis, shape)
    weighted = u.coeffs[:, None] * u.basis.vectors  # (n_modes, 3)
    return np.tensordot(prof, weighted, axes=([0], [0]))


# --- serialization ----------------------------------------------------------

FIELD_HEADER = ["mode_id", "kind", "kx", "ky", "kz", "pol", "parity", "coeff"]


def _mode_row(i: int, md: ModeIndex) -> list[str]:
    if md.is_wave:
        return [str(i), WAVE, *map(str, md.k), str(md.pol), md.parity]
    return [str(i), CONSTANT, "0", "0", "0", str(md.axis), ""]


def _row_mode(row: dict) -> ModeIndex:
    if row["kind"] == CONSTANT:
        return ModeIndex.constant(int(row["pol"]))
    k = (int(row["kx"]), int(row["ky"]), int(row["kz"]))
    return ModeIndex.wave(k, int(row["pol"]), row["parity"])


def field_to_csv(u: SpectralField) -> str:
    """CSV text; for constant modes the ``pol`` column carries the axis."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FIELD_HEADER)
    for i, md in enumerate(u.basis.modes):
        w.writerow(_mode_row(i, md) + [repr(float(u.coeffs[i]))])
    return buf.getvalue()


def field_from_csv(text: str) -> SpectralField:
    rows = list(csv.DictReader(io.StringIO(text)))
    rows.sort(key=lambda r: int(r["mode_id"]))
    modes = [_row_mode(r) for r in rows]
    coeffs = np.array([float(r["coeff"]) for r in rows])
    basis = basis_from_modes(modes)
    return SpectralField(basis, coeffs)


def basis_from_modes(modes: Sequence[ModeIndex]) -> Basis:
    """Reuse the cached Galerkin basis when the modes are exactly some B_m."""
    modes = list(modes)
    wave = [md for md in modes if md.is_wave]
    m = int(math.ceil(math.sqrt(max((md.k2 for md in wave), default=0))))
    if modes == enumerate_modes(m):
        return Basis.galerkin(m)
    return Basis(modes)


def basis_to_csv(basis: Basis) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FIELD_HEADER[:-1])
    for i, md in enumerate(basis.modes):
        w.writerow(_mode_row(i, md))
    return buf.getvalue()


def basis_from_csv(text: str) -> Basis:
    rows = list(csv.DictReader(io.StringIO(text)))
    rows.sort(key=lambda r: int(r["mode_id"]))
    return basis_from_modes([_row_mode(r) for r in rows])


def write_field(u: SpectralField, path: str | Path) -> None:
    Path(path).write_text(field_to_csv(u))


def read_field(path: str | Path) -> SpectralField:
    return field_from_csv(Path(path).read_text())
