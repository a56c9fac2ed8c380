"""Uniform box grids, grid functions and exterior extension policies."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import ConfigError, NumericalError


@dataclass(frozen=True)
class Constant:
    """Extend by the constant ``value`` outside the box."""

    value: float = 0.0

    def mapped(self, fn):
        return Constant(float(fn(self.value)))


@dataclass(frozen=True)
class Periodic:
    """Extend periodically with period ``2L`` (grid spacing ``2L/n``)."""

    def mapped(self, fn):
        return self


@dataclass(frozen=True, eq=False)
class Given:
    """Use ``exterior`` (a grid function on a larger aligned box) and the
    constant ``value`` beyond it."""

    exterior: "GridFunction"
    value: float = 0.0

    def mapped(self, fn):
        ext = self.exterior
        return Given(GridFunction(ext.spec, fn(ext.values)), float(fn(self.value)))


Extension = Union[Constant, Periodic, Given]


@dataclass(frozen=True)
class GridSpec:
    """Tensor grid on ``[-L, L]^d`` with ``n`` points per axis."""

    d: int
    L: float
    n: int
    extension: Extension = field(default_factory=Constant)

    def __post_init__(self):
        if self.d < 1 or int(self.d) != self.d:
            raise ConfigError("grid dimension must be a positive integer")
        if self.n < 8:
            raise ConfigError("grid needs at least 8 points per axis")
        if not (self.L > 0 and math.isfinite(self.L)):
            raise ConfigError("grid half-width L must be positive")

    @property
    def periodic(self) -> bool:
        return isinstance(self.extension, Periodic)

    @property
    def h(self) -> float:
        return 2.0 * self.L / (self.n if self.periodic else self.n - 1)

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.d

    @property
    def size(self) -> int:
        return self.n ** self.d

    def axis(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.n)

    def points(self) -> np.ndarray:
        """Node coordinates, shape ``(n**d, d)`` in C order."""
        ax = self.axis()
        mesh = np.meshgrid(*([ax] * self.d), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def far_value(self, values: np.ndarray) -> float:
        """Value the extension takes far away from the box."""
        ext = self.extension
        if isinstance(ext, Periodic):
            return math.fsum(values.ravel()) / values.size
        return float(ext.value)

    def with_extension(self, extension: Extension) -> "GridSpec":
        return GridSpec(self.d, self.L, self.n, extension)

    def nearest_index(self, x) -> tuple:
        """Multi-index of the node nearest to the point ``x`` (clipped to the box)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        idx = np.rint((x + self.L) / self.h).astype(int)
        return tuple(np.clip(idx, 0, self.n - 1))


class GridFunction:
    """Node values on a :class:`GridSpec` together with its exterior policy.

    Values are stored as an array of shape ``spec.shape`` and treated as
    immutable.
    """

    __slots__ = ("spec", "values")

    def __init__(self, spec: GridSpec, values):
        values = np.asarray(values, dtype=float)
        if values.size == 1 and spec.size != 1:
            values = np.full(spec.shape, float(values))
        values = values.reshape(spec.shape)
        if not np.all(np.isfinite(values)):
            bad = np.argwhere(~np.isfinite(values))[0]
            raise NumericalError(f"grid function has a non-finite value at node {tuple(bad)}")
        values.setflags(write=False)
        self.spec = spec
        self.values = values

    @classmethod
    def from_callable(cls, spec: GridSpec, fn) -> "GridFunction":
        pts = spec.points()
        return cls(spec, np.asarray(fn(pts), dtype=float).reshape(spec.shape))

    def __repr__(self):
        return f"GridFunction(d={self.spec.d}, n={self.spec.n}, L={self.spec.L})"

    # arithmetic keeps the extension consistent with the values
    def _map(self, fn) -> "GridFunction":
        spec = self.spec.with_extension(self.spec.extension.mapped(fn))
        return GridFunction(spec, fn(self.values))

    def __neg__(self):
        return self._map(lambda v: -v)

    def __mul__(self, c):
        c = float(c)
        return self._map(lambda v: c * v)

    __rmul__ = __mul__

    def __add__(self, other):
        if isinstance(other, GridFunction):
            ext_a, ext_b = self.spec.extension, other.spec.extension
            if isinstance(ext_a, Constant) and isinstance(ext_b, Constant):
                ext = Constant(ext_a.value + ext_b.value)
            elif isinstance(ext_a, Periodic) and isinstance(ext_b, Periodic):
                ext = ext_a
            else:
                raise ConfigError("can only add grid functions with constant or periodic extensions")
            return GridFunction(self.spec.with_extension(ext), self.values + other.values)
        c = float(other)
        return self._map(lambda v: v + c)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other if isinstance(other, GridFunction) else -float(other))

    def padded(self, pad: int) -> np.ndarray:
        """Values on the box enlarged by ``pad`` nodes per side, filled by the extension."""
        spec, ext = self.spec, self.spec.extension
        if pad == 0:
            return np.array(self.values)
        if isinstance(ext, Periodic):
            return np.pad(self.values, pad, mode="wrap")
        if isinstance(ext, Constant):
            return np.pad(self.values, pad, mode="constant", constant_values=ext.value)
        out = np.full(tuple(s + 2 * pad for s in spec.shape), float(ext.value))
        outer = ext.exterior
        h = spec.h
        if abs(outer.spec.h - h) > 1e-12 * h:
            raise ConfigError("exterior data must share the grid spacing of the box")
        ax = -spec.L + h * (np.arange(spec.n + 2 * pad) - pad)
        idx = np.rint((ax + outer.spec.L) / h).astype(int)
        inside = (idx >= 0) & (idx < outer.spec.n)
        sel = np.ix_(*([np.nonzero(inside)[0]] * spec.d))
        src = np.ix_(*([idx[inside]] * spec.d))
        out[sel] = outer.values[src]
        core = tuple(slice(pad, pad + spec.n) for _ in range(spec.d))
        out[core] = self.values
        return out

    def evaluate(self, points) -> np.ndarray:
        """Evaluate at arbitrary points by nearest node, using the extension
        outside the box."""
        spec = self.spec
        pts = np.asarray(points, dtype=float)
        if spec.d == 1 and (pts.ndim == 0 or pts.shape[-1] != 1):
            pts = pts[..., None]
        flat = pts.reshape(-1, spec.d)
        ext = spec.extension
        if isinstance(ext, Periodic):
            period = 2.0 * spec.L
            idx = np.rint(((flat + spec.L) % period) / spec.h).astype(int) % spec.n
            return self.values[tuple(idx.T)].reshape(pts.shape[:-1])
        inside = np.all(np.abs(flat) <= spec.L * (1 + 1e-12), axis=1)
        out = np.empty(flat.shape[0])
        idx = np.clip(np.rint((flat[inside] + spec.L) / spec.h).astype(int), 0, spec.n - 1)
        out[inside] = self.values[tuple(idx.T)]
        if isinstance(ext, Constant):
            out[~inside] = ext.value
        else:
            out[~inside] = ext.exterior.evaluate(flat[~inside]) if (~inside).any() else []
            outer = ext.exterior.spec
            far = ~np.all(np.abs(flat) <= outer.L * (1 + 1e-12), axis=1)
            out[far] = ext.value
        return out.reshape(pts.shape[:-1])
