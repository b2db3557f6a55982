"""
Sampled fields on the periodic unit cube.

All analysis in this package lives on the torus ``[0, 1)^n`` (``n`` is 1 or 2)
sampled at ``N = 2**L`` equally spaced points per axis.  A vector field with
``m`` complex components is stored as an array of shape ``grid.shape + (m,)``.

The FFT is unitary in both directions (``norm="ortho"``).  Frequencies are the
integers ``k`` in ``[-N/2, N/2)`` so that sample ``i`` of the mode
``exp(2 pi i k x)`` lives at ``x = i / N``.

Dyadic cubes ``Q_{jk}`` at level ``j`` are products of ``2**-j [k_i, k_i + 1)``
and hold ``(N / 2**j)**n`` samples each.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np


@dataclass(frozen=True)
class TorusGrid:
    """Uniform periodic sampling of ``[0, 1)^n`` with ``2**L`` points per axis."""

    n: int
    L: int

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError(f"dimension n must be 1 or 2, got {self.n}")
        if int(self.L) != self.L or self.L < 3:
            raise ValueError(f"depth L must be an integer >= 3, got {self.L}")

    @property
    def N(self) -> int:
        return 2 ** self.L

    @property
    def spacing(self) -> float:
        return 1.0 / self.N

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.n

    @property
    def size(self) -> int:
        return self.N ** self.n

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(range(self.n))

    def points(self) -> np.ndarray:
        """Sample coordinates, shape ``grid.shape + (n,)``."""
        x = np.arange(self.N) / self.N
        return np.stack(np.meshgrid(*([x] * self.n), indexing="ij"), axis=-1)

    def frequencies(self) -> np.ndarray:
        """Integer frequency vectors in FFT order, shape ``grid.shape + (n,)``."""
        k = np.fft.fftfreq(self.N, d=1.0 / self.N).round().astype(int)
        return np.stack(np.meshgrid(*([k] * self.n), indexing="ij"), axis=-1)

    def frequency_norm(self) -> np.ndarray:
        """Euclidean length ``|k|`` of every frequency, shape ``grid.shape``."""
        return np.sqrt((self.frequencies() ** 2).sum(axis=-1).astype(float))

    def offset_distance(self) -> np.ndarray:
        """Torus distance from the origin to every sample, shape ``grid.shape``."""
        i = np.arange(self.N)
        d1 = np.minimum(i, self.N - i) / self.N
        mesh = np.meshgrid(*([d1] * self.n), indexing="ij")
        return np.sqrt(sum(d ** 2 for d in mesh))

    def distance_to(self, center) -> np.ndarray:
        """Torus distance from ``center`` (a point of ``[0, 1)^n``) to every sample."""
        center = np.broadcast_to(np.asarray(center, dtype=float), (self.n,))
        diff = np.abs(self.points() - center) % 1.0
        diff = np.minimum(diff, 1.0 - diff)
        return np.sqrt((diff ** 2).sum(axis=-1))

    def pair_distance(self, rows: np.ndarray | None = None) -> np.ndarray:
        """Torus distances between flat sample indices ``rows`` and every sample.

        Returns an array of shape ``(len(rows), grid.size)``.
        """
        idx = np.indices(self.shape).reshape(self.n, -1).T
        if rows is None:
            rows = np.arange(self.size)
        diff = np.abs(idx[rows][:, None, :] - idx[None, :, :])
        diff = np.minimum(diff, self.N - diff) / self.N
        return np.sqrt((diff ** 2).sum(axis=-1))

    def levels(self) -> range:
        return range(self.L + 1)

    def cubes(self, j: int) -> Iterator["DyadicCube"]:
        """All dyadic cubes of level ``j`` in row-major order of their index."""
        for k in np.ndindex(*((2 ** j,) * self.n)):
            yield DyadicCube(j, tuple(int(v) for v in k))

    def cube_labels(self, j: int) -> np.ndarray:
        """Row-major index of the level-``j`` cube containing each sample."""
        if not 0 <= j <= self.L:
            raise ValueError(f"level {j} outside 0..{self.L}")
        side = self.N // 2 ** j
        comp = [np.arange(self.N) // side] * self.n
        mesh = np.meshgrid(*comp, indexing="ij")
        label = np.zeros(self.shape, dtype=int)
        for c in mesh:
            label = label * 2 ** j + c
        return label

    def cube_view(self, values: np.ndarray, j: int) -> np.ndarray:
        """Reshape ``values`` (leading axes ``grid.shape``) so that axis 0 runs over
        level-``j`` cubes and axis 1 over the samples inside each cube."""
        side = self.N // 2 ** j
        c = 2 ** j
        tail = values.shape[self.n:]
        if self.n == 1:
            return values.reshape((c, side) + tail)
        v = values.reshape((c, side, c, side) + tail)
        v = np.moveaxis(v, 2, 1)
        return v.reshape((c * c, side * side) + tail)

    def from_cube_view(self, values: np.ndarray, j: int) -> np.ndarray:
        """Inverse of :meth:`cube_view`."""
        side = self.N // 2 ** j
        c = 2 ** j
        tail = values.shape[2:]
        if self.n == 1:
            return values.reshape((self.N,) + tail)
        v = values.reshape((c, c, side, side) + tail)
        v = np.moveaxis(v, 1, 2)
        return v.reshape(self.shape + tail)

    def broadcast_cubes(self, per_cube: np.ndarray, j: int) -> np.ndarray:
        """Spread per-cube values (axis 0 over cubes) back onto the samples."""
        side = self.N // 2 ** j
        rep = np.repeat(per_cube[:, None], side ** self.n, axis=1)
        return self.from_cube_view(rep, j)


@dataclass(frozen=True)
class DyadicCube:
    """The cube ``prod_i 2**-j [k_i, k_i + 1)`` on the torus."""

    level: int
    index: tuple[int, ...]

    def flat_index(self) -> int:
        out = 0
        for k in self.index:
            out = out * 2 ** self.level + k
        return out

    @property
    def side(self) -> float:
        return 2.0 ** -self.level

    @property
    def corner(self) -> np.ndarray:
        return np.asarray(self.index, dtype=float) * self.side

    def sample_slices(self, grid: TorusGrid) -> tuple[slice, ...]:
        if self.level > grid.L:
            raise ValueError(f"cube level {self.level} finer than grid depth {grid.L}")
        s = grid.N // 2 ** self.level
        return tuple(slice(k * s, (k + 1) * s) for k in self.index)


@dataclass(frozen=True, eq=False)
class SampledField:
    """A ``C^m``-valued function sampled on a :class:`TorusGrid`.

    ``values`` has shape ``grid.shape + (m,)``.  When ``band_limit`` is given the
    Fourier coefficients with ``|k|_inf > band_limit`` must vanish.
    """

    grid: TorusGrid
    values: np.ndarray
    band_limit: int | None = None

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim == self.grid.n:
            v = v[..., None]
        if v.shape[: self.grid.n] != self.grid.shape or v.ndim != self.grid.n + 1:
            raise ValueError(
                f"values of shape {v.shape} do not match grid shape {self.grid.shape} + (m,)"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v = v.astype(complex)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.band_limit is not None:
            coef = fft_forward(self)
            kinf = np.abs(self.grid.frequencies()).max(axis=-1)
            outside = np.abs(coef[kinf > self.band_limit])
            scale = np.abs(coef).max()
            if outside.size and scale > 0 and outside.max() > 1e-10 * scale:
                raise ValueError(
                    f"field has Fourier content beyond band limit {self.band_limit}"
                )

    @property
    def m(self) -> int:
        return self.values.shape[-1]

    def __add__(self, other: "SampledField") -> "SampledField":
        return SampledField(self.grid, self.values + other.values)

    def __mul__(self, c) -> "SampledField":
        return SampledField(self.grid, self.values * c, self.band_limit)

    __rmul__ = __mul__

    def translate(self, shift) -> "SampledField":
        """Circular shift by an integer sample vector: ``g(x) = f(x - shift/N)``."""
        shift = tuple(np.broadcast_to(np.asarray(shift, dtype=int), (self.grid.n,)))
        return SampledField(
            self.grid, np.roll(self.values, shift, axis=self.grid.axes), self.band_limit
        )

    def l2_norm(self) -> float:
        """``(int |f|^2 dx)^{1/2}`` with Lebesgue weight ``N^-n`` per sample."""
        return float(np.sqrt((np.abs(self.values) ** 2).sum() / self.grid.size))


def fft_forward(f: SampledField) -> np.ndarray:
    """Unitary FFT over the spatial axes; the vector index is carried along."""
    return np.fft.fftn(f.values, axes=f.grid.axes, norm="ortho")


def fft_inverse(coef: np.ndarray, grid: TorusGrid) -> SampledField:
    return SampledField(grid, np.fft.ifftn(coef, axes=grid.axes, norm="ortho"))


def symbol_on_grid(grid: TorusGrid, sigma) -> np.ndarray:
    """Evaluate a frequency profile on every integer frequency of ``grid``.

    ``sigma`` is either an array of shape ``grid.shape`` (already sampled in FFT
    order) or a callable taking the integer frequency array of shape
    ``grid.shape + (n,)``.
    """
    if callable(sigma):
        sym = np.asarray(sigma(grid.frequencies()))
    else:
        sym = np.asarray(sigma)
    if np.ndim(sym) == 0:
        sym = np.full(grid.shape, sym)
    if sym.shape != grid.shape:
        raise ValueError(f"symbol shape {sym.shape} does not match grid shape {grid.shape}")
    return sym


def convolve_symbol(f: SampledField, sigma) -> SampledField:
    """Fourier multiplication: the output spectrum is ``sigma(k) * fhat(k)``."""
    sym = symbol_on_grid(f.grid, sigma)
    coef = fft_forward(f) * sym[..., None]
    return fft_inverse(coef, f.grid)


def cube_mean(values: np.ndarray, grid: TorusGrid, cube: DyadicCube):
    """Arithmetic mean of a scalar (or trailing-axis) field over the samples of ``cube``."""
    return np.asarray(values)[cube.sample_slices(grid)].mean(axis=tuple(range(grid.n)))


def level_means(values: np.ndarray, grid: TorusGrid, j: int) -> np.ndarray:
    """Means over every level-``j`` cube; axis 0 of the result runs over cubes."""
    return grid.cube_view(np.asarray(values), j).mean(axis=1)


def double_cube_samples(cube: DyadicCube, grid: TorusGrid) -> tuple[np.ndarray, ...]:
    """Index arrays (one per axis, as for fancy indexing) of the samples in ``2Q``.

    ``2Q`` is the concentric cube of twice the edge length, wrapped on the torus.
    """
    if cube.level < 1:
        raise ValueError("doubling exceeds domain")
    if cube.level > grid.L:
        raise ValueError(f"cube level {cube.level} finer than grid depth {grid.L}")
    side = 2.0 ** -cube.level
    per_axis = []
    for k in cube.index:
        lo = (k - 0.5) * side * grid.N
        hi = (k + 1.5) * side * grid.N
        idx = np.arange(int(np.ceil(lo - 1e-9)), int(np.ceil(hi - 1e-9))) % grid.N
        per_axis.append(idx)
    mesh = np.meshgrid(*per_axis, indexing="ij")
    return tuple(m.ravel() for m in mesh)


def band_limited_field(
    grid: TorusGrid,
    m: int = 1,
    band: tuple[float, float] = (4, 16),
    seed: int = 0,
    real: bool = False,
) -> SampledField:
    """Random zero-mean field with Fourier support in ``band[0] <= |k| <= band[1]``.

    The coefficients are drawn for the fixed box ``|k|_inf <= band[1]`` in a
    grid-independent order, so the same seed describes the same continuum
    function at every resolution.
    """
    lo, hi = band
    if lo <= 0:
        raise ValueError("band must exclude the zero frequency")
    kmax = int(np.floor(hi))
    if kmax >= grid.N // 2:
        raise ValueError(f"band upper edge {hi} reaches the Nyquist frequency {grid.N // 2}")
    rng = np.random.default_rng(seed)
    ks = np.arange(-kmax, kmax + 1)
    box = np.stack(np.meshgrid(*([ks] * grid.n), indexing="ij"), axis=-1).reshape(-1, grid.n)
    c = rng.standard_normal((len(box), m)) + 1j * rng.standard_normal((len(box), m))
    norm = np.sqrt((box ** 2).sum(axis=1))
    c[(norm < lo) | (norm > hi)] = 0.0
    coef = np.zeros(grid.shape + (m,), dtype=complex)
    coef[tuple((box % grid.N).T)] = c
    if real:
        flipped = np.conj(np.roll(np.flip(coef, axis=grid.axes), 1, axis=grid.axes))
        coef = 0.5 * (coef + flipped)
    # f(x) = sum_k c_k exp(2 pi i k x); the unitary FFT carries a factor N^{n/2}
    coef *= np.sqrt(grid.size)
    vals = np.fft.ifftn(coef, axes=grid.axes, norm="ortho")
    if real:
        vals = vals.real
    return SampledField(grid, vals, band_limit=kmax)


def pure_frequency(grid: TorusGrid, k, vector=None) -> SampledField:
    """The field ``exp(2 pi i k.x) v``."""
    k = np.broadcast_to(np.asarray(k, dtype=float), (grid.n,))
    v = np.atleast_1d(np.asarray([1.0] if vector is None else vector, dtype=complex))
    phase = np.exp(2j * np.pi * (grid.points() @ k))
    return SampledField(grid, phase[..., None] * v)


# -- serialization -----------------------------------------------------------

_HEADER = ["n", "L", "m", "band_limit"]


def write_field_csv(f: SampledField, path) -> None:
    """Header row ``n,L,m,band_limit``, its values, then one row per sample
    (row-major over the grid) with interleaved ``re, im`` per component."""
    path = Path(path)
    flat = f.values.reshape(-1, f.m)
    inter = np.empty((flat.shape[0], 2 * f.m))
    inter[:, 0::2] = flat.real
    inter[:, 1::2] = flat.imag
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_HEADER)
        w.writerow([f.grid.n, f.grid.L, f.m, "" if f.band_limit is None else f.band_limit])
        for row in inter:
            w.writerow([repr(float(x)) for x in row])


def read_field_csv(path) -> SampledField:
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header != _HEADER:
            raise ValueError(f"unexpected field header {header}")
        n, L, m, bl = next(r)
        rows = np.array([[float(x) for x in row] for row in r])
    grid = TorusGrid(int(n), int(L))
    vals = (rows[:, 0::2] + 1j * rows[:, 1::2]).reshape(grid.shape + (int(m),))
    return SampledField(grid, vals, None if bl == "" else int(bl))


def write_field_binary(f: SampledField, path) -> None:
    """Four little-endian int64 header words ``n, L, m, band_limit`` (-1 for none)
    followed by interleaved float64 ``re, im`` in the same order as the CSV."""
    flat = f.values.reshape(-1)
    inter = np.empty(2 * flat.size, dtype="<f8")
    inter[0::2] = flat.real
    inter[1::2] = flat.imag
    bl = -1 if f.band_limit is None else f.band_limit
    with Path(path).open("wb") as fh:
        fh.write(struct.pack("<4q", f.grid.n, f.grid.L, f.m, bl))
        fh.write(inter.tobytes())


def read_field_binary(path) -> SampledField:
    raw = Path(path).read_bytes()
    n, L, m, bl = struct.unpack("<4q", raw[:32])
    data = np.frombuffer(raw[32:], dtype="<f8")
    grid = TorusGrid(n, L)
    vals = (data[0::2] + 1j * data[1::2]).reshape(grid.shape + (m,))
    return SampledField(grid, vals, None if bl < 0 else bl)
