"""Named initial data and forcing profiles available to experiment configs."""
from __future__ import annotations

import re

import numpy as np

from .errors import ConfigError
from .grid import GridFunction, GridSpec
from .oracles import _SMOOTHSTEP

ROUGH_CELL = 0.125
BOX_RADIUS = 1.0
BOX_RAMP = 0.25

INITIAL_PROFILES = ("constant", "box", "cosine", "rough_seeded")
FORCING_PROFILES = ("zero", "constant")


def parse_profile(text: str, default_seed: int = 0):
    """Split ``"rough_seeded(3)"`` into ``("rough_seeded", 3)``."""
    m = re.fullmatch(r"\s*([a-z_]+)\s*(?:\(\s*(-?\d+)\s*\))?\s*", text)
    if not m:
        raise ConfigError(f"cannot parse profile {text!r}")
    name, arg = m.group(1), m.group(2)
    return name, int(arg) if arg is not None else default_seed


def smoothed_box(points: np.ndarray, radius: float = BOX_RADIUS, ramp: float = BOX_RAMP):
    """1 inside ``|x| <= radius - ramp``, 0 beyond ``radius + ramp``, with a
    ``C^2`` quintic transition."""
    r = np.linalg.norm(points, axis=1)
    t = np.clip((r - (radius - ramp)) / (2.0 * ramp), 0.0, 1.0)
    return 1.0 - _SMOOTHSTEP(t)


def rough_seeded(points: np.ndarray, L: float, seed: int, cell: float = ROUGH_CELL):
    """Piecewise constant values in ``[0, 1]`` on cubes of side ``cell``.

    The cell values depend only on ``seed``, ``L`` and ``cell``, so the same
    function is sampled at every grid resolution.
    """
    d = points.shape[1]
    m = int(np.ceil(2.0 * L / cell)) + 1
    table = np.random.default_rng(seed).random((m,) * d)
    idx = np.clip(np.floor((points + L) / cell).astype(int), 0, m - 1)
    return table[tuple(idx.T)]


def initial_profile(spec: GridSpec, name: str, seed: int = 0, value: float = 1.0) -> GridFunction:
    """Sample a named initial profile on ``spec``."""
    pts = spec.points()
    if name == "constant":
        vals = np.full(spec.size, float(value))
    elif name == "box":
        vals = smoothed_box(pts)
    elif name == "cosine":
        vals = np.cos(np.pi * pts[:, 0] / spec.L)
    elif name == "rough_seeded":
        vals = rough_seeded(pts, spec.L, seed)
    else:
        raise ConfigError(f"unknown initial profile {name!r}; known: {', '.join(INITIAL_PROFILES)}")
    return GridFunction(spec, vals.reshape(spec.shape))


def forcing_profile(name: str, value: float = 0.0):
    """Return ``f(points, t)`` for a named forcing, or None for ``zero``."""
    if name == "zero":
        return None
    if name == "constant":
        c = float(value)
        return lambda points, t: np.full(len(points), c)
    raise ConfigError(f"unknown forcing profile {name!r}; known: {', '.join(FORCING_PROFILES)}")
