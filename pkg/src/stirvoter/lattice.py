"""Periodic lattice geometry and occupancy configurations.

Sites of the d-dimensional discrete torus with side n are flattened
row-major with coordinate 0 fastest, so the flat index of ``(x_0, ..,
x_{d-1})`` is ``sum_k (x_k mod n) * n**k``. Occupancies are 0/1 words stored
as uint8 arrays; the bit string serialization reads site 0 first.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class Torus:
    """Discrete torus (Z/nZ)^d."""

    d: int
    n: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"dimension must be >= 1, got {self.d}")
        if self.n < 2:
            raise ValueError(f"side must be >= 2, got {self.n}")

    @property
    def size(self) -> int:
        return self.n**self.d

    def sites(self) -> range:
        return range(self.size)


def site_index(torus: Torus, coords: Sequence[int]) -> int:
    """Flat index of a coordinate vector, wrapping each coordinate mod n."""
    if len(coords) != torus.d:
        raise ValueError(f"expected {torus.d} coordinates, got {len(coords)}")
    idx = 0
    stride = 1
    for c in coords:
        idx += (int(c) % torus.n) * stride
        stride *= torus.n
    return idx


def site_coords(torus: Torus, index: int) -> tuple[int, ...]:
    if not 0 <= index < torus.size:
        raise ValueError(f"site index {index} out of range for size {torus.size}")
    out = []
    for _ in range(torus.d):
        out.append(index % torus.n)
        index //= torus.n
    return tuple(out)


def neighbor_index(torus: Torus, index: int, axis: int, step: int = 1) -> int:
    """Flat index of the site shifted by ``step`` along ``axis``."""
    n = torus.n
    stride = n**axis
    coord = (index // stride) % n
    shifted = (coord + step) % n
    return index + (shifted - coord) * stride


def neighbor_tables(torus: Torus) -> tuple[np.ndarray, np.ndarray]:
    """(plus, minus) int64 arrays of shape (d, size): nearest neighbors."""
    size = torus.size
    idx = np.arange(size, dtype=np.int64)
    plus = np.empty((torus.d, size), dtype=np.int64)
    minus = np.empty((torus.d, size), dtype=np.int64)
    for axis in range(torus.d):
        stride = torus.n**axis
        coord = (idx // stride) % torus.n
        plus[axis] = idx + (((coord + 1) % torus.n) - coord) * stride
        minus[axis] = idx + (((coord - 1) % torus.n) - coord) * stride
    return plus, minus


def offset_table(torus: Torus, offset: Sequence[int]) -> np.ndarray:
    """int64 array t with t[x] = flat index of (coords(x) + offset)."""
    if len(offset) != torus.d:
        raise ValueError(f"expected {torus.d} offset coordinates, got {len(offset)}")
    idx = np.arange(torus.size, dtype=np.int64)
    out = np.zeros(torus.size, dtype=np.int64)
    stride = 1
    for k in range(torus.d):
        coord = (idx // stride) % torus.n
        out += ((coord + int(offset[k])) % torus.n) * stride
        stride *= torus.n
    return out


@dataclass
class Configuration:
    """Occupancy word eta in {0,1}^sites on a torus."""

    torus: Torus
    occ: np.ndarray = field(repr=False)

    def __post_init__(self):
        occ = np.asarray(self.occ, dtype=np.uint8)
        if occ.shape != (self.torus.size,):
            raise ValueError(
                f"occupancy must have shape ({self.torus.size},), got {occ.shape}"
            )
        if occ.max(initial=0) > 1:
            raise ValueError("occupancies must be 0 or 1")
        self.occ = occ

    # -- constructors ------------------------------------------------------

    @classmethod
    def from_bits(cls, torus: Torus, bits: str) -> "Configuration":
        if len(bits) != torus.size or set(bits) - {"0", "1"}:
            raise ValueError(f"need {torus.size} characters of 0/1, got {bits!r}")
        return cls(torus, np.frombuffer(bits.encode(), dtype=np.uint8) - ord("0"))

    @classmethod
    def bernoulli(cls, torus: Torus, rho: float, rng: np.random.Generator) -> "Configuration":
        if not 0.0 <= rho <= 1.0:
            raise ValueError(f"density must be in [0,1], got {rho}")
        return cls(torus, (rng.random(torus.size) < rho).astype(np.uint8))

    @classmethod
    def constant(cls, torus: Torus, value: int) -> "Configuration":
        return cls(torus, np.full(torus.size, value, dtype=np.uint8))

    # -- views -------------------------------------------------------------

    def bits(self) -> str:
        return "".join("1" if b else "0" for b in self.occ)

    def particle_count(self) -> int:
        return int(self.occ.sum())

    def copy(self) -> "Configuration":
        return Configuration(self.torus, self.occ.copy())

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Configuration)
            and self.torus == other.torus
            and bool(np.array_equal(self.occ, other.occ))
        )


def flip(eta: Configuration, x: int) -> Configuration:
    """New configuration with the occupancy at site x flipped."""
    out = eta.copy()
    out.occ[x] ^= 1
    return out


def swap(eta: Configuration, x: int, y: int) -> Configuration:
    """New configuration with the occupancies at sites x and y exchanged."""
    out = eta.copy()
    out.occ[x], out.occ[y] = eta.occ[y], eta.occ[x]
    return out


def translate(eta: Configuration, z: Sequence[int]) -> Configuration:
    """New configuration tau_z eta with (tau_z eta)_x = eta_{x+z}."""
    t = eta.torus
    if len(z) != t.d:
        raise ValueError(f"expected {t.d} shift coordinates, got {len(z)}")
    grid = eta.occ.reshape((t.n,) * t.d, order="F")
    # new[x] = old[x + z]  <=>  roll by -z along every axis
    for axis, shift in enumerate(z):
        grid = np.roll(grid, -int(shift), axis=axis)
    return Configuration(t, grid.reshape(-1, order="F"))


def config_to_int(eta: Configuration) -> int:
    """Occupancy word as an integer, site 0 in the least significant bit."""
    out = 0
    for x in range(eta.torus.size - 1, -1, -1):
        out = (out << 1) | int(eta.occ[x])
    return out


def config_from_int(torus: Torus, word: int) -> Configuration:
    if not 0 <= word < (1 << torus.size):
        raise ValueError(f"word {word} out of range for {torus.size} sites")
    occ = np.fromiter(((word >> x) & 1 for x in range(torus.size)), dtype=np.uint8)
    return Configuration(torus, occ)


def config_to_json(eta: Configuration) -> dict:
    return {"d": eta.torus.d, "n": eta.torus.n, "bits": eta.bits()}


def config_from_json(payload: dict) -> Configuration:
    torus = Torus(int(payload["d"]), int(payload["n"]))
    return Configuration.from_bits(torus, payload["bits"])
