"""APSK signal sets: construction, indexing, power accounting, ring partitions.

Symbols are indexed ring-major: innermost ring first, and inside ring ``k``
the phase index ``j = 0 .. l_k - 1`` maps to the angle ``2*pi*j/l_k + phi_k``.
Radii are amplitudes in sqrt(W), powers in W.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "RingGeometry",
    "ApskSpec",
    "build_apsk",
    "uniform_radii",
    "rescale_power",
    "enumerate_partitions",
    "count_partitions",
    "partition_from_string",
    "partition_to_string",
]

RADIUS_TOL = 1e-9


class RingGeometry:
    """Shared accessors for constellations organised in concentric rings.

    Subclasses provide ``radii`` and ``ring_phases``; detectors and metrics
    only rely on the members defined here.
    """

    radii: tuple
    ring_phases: tuple

    @property
    def n_rings(self) -> int:
        return len(self.radii)

    @property
    def ring_counts(self) -> np.ndarray:
        return np.array([len(p) for p in self.ring_phases], dtype=int)

    @property
    def n_points(self) -> int:
        return int(self.ring_counts.sum())

    @property
    def ring_index(self) -> np.ndarray:
        """Ring number (0-based) of every symbol, in symbol order."""
        return np.repeat(np.arange(self.n_rings), self.ring_counts)

    @property
    def symbol_phases(self) -> np.ndarray:
        return np.concatenate([np.asarray(p, dtype=float) for p in self.ring_phases])

    @property
    def symbols(self) -> np.ndarray:
        r = np.asarray(self.radii, dtype=float)[self.ring_index]
        return r * np.exp(1j * self.symbol_phases)

    @property
    def power(self) -> float:
        r = np.asarray(self.radii, dtype=float)
        return float(np.dot(self.ring_counts, r**2) / self.n_points)

    def ring_slices(self) -> list[slice]:
        stops = np.cumsum(self.ring_counts)
        starts = stops - self.ring_counts
        return [slice(int(a), int(b)) for a, b in zip(starts, stops)]


@dataclass(frozen=True)
class ApskSpec(RingGeometry):
    """A concrete APSK constellation.

    Parameters
    ----------
    ring_sizes : tuple of int
        Points per ring ``l``, innermost first.
    radii : tuple of float
        Ring radii ``r`` in sqrt(W), strictly increasing.
    phase_offsets : tuple of float
        Per-ring phase offsets ``phi`` in radians.
    """

    ring_sizes: tuple
    radii: tuple
    phase_offsets: tuple

    def __post_init__(self):
        _check_apsk(self.ring_sizes, self.radii, self.phase_offsets, RADIUS_TOL)

    @property
    def ring_phases(self) -> tuple:
        return tuple(
            2 * np.pi * np.arange(l) / l + phi
            for l, phi in zip(self.ring_sizes, self.phase_offsets)
        )

    @property
    def normalized_radii(self) -> np.ndarray:
        """Radii divided by sqrt(P), so that sum(l * r**2) == M."""
        return np.asarray(self.radii) / np.sqrt(self.power)

    @property
    def label(self) -> str:
        return partition_to_string(self.ring_sizes)

    def with_phase_offsets(self, phase_offsets: Sequence[float]) -> "ApskSpec":
        return ApskSpec(self.ring_sizes, self.radii, tuple(float(p) for p in phase_offsets))

    def is_rectangular(self) -> bool:
        l = self.ring_sizes
        return len(set(l)) == 1 and 1 < len(l) < self.n_points

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "l": [int(v) for v in self.ring_sizes],
            "r": [float(v) for v in self.radii],
            "phi": [float(v) for v in self.phase_offsets],
            "P": self.power,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ApskSpec":
        spec = build_apsk(data["l"], data["r"], data.get("phi"))
        if "P" in data and not np.isclose(spec.power, float(data["P"]), rtol=1e-9, atol=0):
            raise ValueError(
                f"stored power {data['P']!r} disagrees with radii (computed {spec.power!r})"
            )
        return spec

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_json(cls, text: str) -> "ApskSpec":
        return cls.from_dict(json.loads(text))


def _check_apsk(l, r, phi, tol):
    if not (len(l) == len(r) == len(phi)):
        raise ValueError(
            f"dimension mismatch: {len(l)} ring sizes, {len(r)} radii, {len(phi)} offsets"
        )
    if len(l) == 0:
        raise ValueError("an APSK constellation needs at least one ring")
    if any(int(v) != v or v < 1 for v in l):
        raise ValueError(f"ring sizes must be positive integers, got {l}")
    r = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(r)) or np.any(r < 0):
        raise ValueError(f"radii must be finite and nonnegative, got {tuple(r)}")
    scale = max(float(r.max()), np.finfo(float).tiny)
    if np.any(np.diff(r) <= tol * scale):
        raise ValueError(f"radii must be strictly increasing, got {tuple(r)}")
    if l[0] == 1 and r[0] != 0.0:
        raise ValueError("a single point in the innermost ring must sit at the origin")
    if l[0] > 1 and r[0] <= tol * scale:
        raise ValueError("an innermost ring with several points needs a positive radius")
    if not np.all(np.isfinite(phi)):
        raise ValueError("phase offsets must be finite")


def build_apsk(ring_sizes, radii, phase_offsets=None, tolerance: float = RADIUS_TOL) -> ApskSpec:
    """Build an :class:`ApskSpec` after validating the ring description.

    A first radius within ``tolerance`` (relative to the largest radius) of
    zero is snapped to exactly zero when the innermost ring holds one point.
    """
    l = tuple(int(v) for v in ring_sizes)
    r = [float(v) for v in radii]
    if phase_offsets is None:
        phase_offsets = [0.0] * len(l)
    phi = tuple(float(v) for v in phase_offsets)
    if l and r and l[0] == 1 and abs(r[0]) <= tolerance * max(max(r), 1e-300):
        r[0] = 0.0
    _check_apsk(l, r, phi, tolerance)
    return ApskSpec(l, tuple(r), phi)


def uniform_radii(ring_sizes, power: float) -> np.ndarray:
    """Uniform radius vector with average power ``power``.

    Consecutive radii differ by a constant ``delta``; the first radius is
    ``delta`` unless the innermost ring is a single point at the origin.
    The one-point constellation ``(1)`` cannot meet the power constraint
    and is returned at the origin.
    """
    if not power > 0:
        raise ValueError(f"power must be positive, got {power}")
    l = np.asarray(ring_sizes, dtype=float)
    if l.size == 1 and l[0] == 1:
        return np.zeros(1)
    k = np.arange(len(l), dtype=float)
    steps = k if l[0] == 1 else k + 1
    delta = np.sqrt(power * l.sum() / np.dot(l, steps**2))
    return delta * steps


def rescale_power(spec: ApskSpec, power: float) -> ApskSpec:
    """Scale every radius by ``sqrt(power / spec.power)``."""
    if not power > 0:
        raise ValueError(f"target power must be positive, got {power}")
    factor = np.sqrt(power / spec.power)
    return ApskSpec(
        spec.ring_sizes,
        tuple(float(v) for v in np.asarray(spec.radii) * factor),
        spec.phase_offsets,
    )


def _compositions(m: int, parts: int) -> Iterator[tuple]:
    # cut positions between the m unit items, in lexicographic order of the parts
    for cuts in itertools.combinations(range(1, m), parts - 1):
        bounds = (0,) + cuts + (m,)
        yield tuple(b - a for a, b in zip(bounds, bounds[1:]))


def enumerate_partitions(M: int, max_rings: int | None = None) -> list[tuple]:
    """All ordered ring partitions ``l`` of ``M`` points.

    Returns every composition of ``M`` into ``1 .. min(M, max_rings)``
    positive parts, sorted lexicographically. Without a ring limit there
    are ``2**(M-1)`` of them.
    """
    if M < 1:
        raise ValueError(f"M must be at least 1, got {M}")
    top = M if max_rings is None else min(M, int(max_rings))
    out = [c for k in range(1, top + 1) for c in _compositions(M, k)]
    out.sort()
    return out


def count_partitions(M: int, max_rings: int | None = None) -> int:
    from math import comb

    top = M if max_rings is None else min(M, int(max_rings))
    return sum(comb(M - 1, k - 1) for k in range(1, top + 1))


def partition_to_string(l) -> str:
    return "-".join(str(int(v)) for v in l)


def partition_from_string(text: str) -> tuple:
    parts = [p for p in text.replace(",", "-").replace(" ", "").strip("()").split("-") if p]
    if not parts:
        raise ValueError(f"empty partition string {text!r}")
    return tuple(int(p) for p in parts)
