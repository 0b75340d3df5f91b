"""Binary labelings, the phase-offset rule and exhaustive labeling search."""
from __future__ import annotations

import csv
import io
import itertools
import math
import os
from dataclasses import dataclass

import numpy as np

from .analytic import HarmonicsBank
from .metrics import TransitionMatrix, hamming_distances

__all__ = [
    "Labeling",
    "brgc",
    "direct_product",
    "gray_rectangular",
    "proposed_phase_offsets",
    "exhaustive_labeling_search",
    "MAX_SEARCH_M",
]

MAX_SEARCH_M = 8


@dataclass(frozen=True, eq=False)
class Labeling:
    """``M x m`` binary matrix; row ``i`` is the label of symbol ``i``."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 2:
            raise ValueError("labeling must be a 2-D bit matrix")
        if not np.isin(b, (0, 1)).all():
            raise ValueError("labeling entries must be 0 or 1")
        M, m = b.shape
        if M != 2**m:
            raise ValueError(f"{M} rows cannot carry {m}-bit labels bijectively")
        if np.unique(_to_int(b)).size != M:
            raise ValueError("labels must be pairwise distinct")
        b = b.astype(np.int8)
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)

    @property
    def n_points(self) -> int:
        return self.bits.shape[0]

    @property
    def n_bits(self) -> int:
        return self.bits.shape[1]

    def strings(self) -> list[str]:
        return ["".join(map(str, row)) for row in self.bits]

    def __eq__(self, other):
        return isinstance(other, Labeling) and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash(self.bits.tobytes())

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["symbol", "bits"])
        for i, s in enumerate(self.strings()):
            writer.writerow([i, s])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "Labeling":
        text = open(source, encoding="utf-8").read() if os.path.exists(str(source)) else source
        rows = list(csv.reader(io.StringIO(text)))[1:]
        rows.sort(key=lambda r: int(r[0]))
        if [int(r[0]) for r in rows] != list(range(len(rows))):
            raise ValueError("symbol indices must be 0..M-1")
        return cls(np.array([[int(c) for c in r[1].strip()] for r in rows]))


def _to_int(bits) -> np.ndarray:
    b = np.asarray(bits, dtype=np.int64)
    return b @ (1 << np.arange(b.shape[-1] - 1, -1, -1))


def _block(n_bits: int) -> np.ndarray:
    # raw reflected code; order 0 is the single empty label
    out = np.zeros((1, 0), dtype=np.int8)
    for _ in range(n_bits):
        top = np.hstack([np.zeros((len(out), 1), np.int8), out])
        bottom = np.hstack([np.ones((len(out), 1), np.int8), out[::-1]])
        out = np.vstack([top, bottom])
    return out


def brgc(m: int) -> Labeling:
    """Binary reflected Gray code with ``2**m`` rows."""
    if m < 1:
        raise ValueError(f"m must be at least 1, got {m}")
    return Labeling(_block(m))


def direct_product(A, B) -> np.ndarray:
    """Ordered direct product: row ``q*i + j`` (0-based) is ``(a_i, b_j)``."""
    A = np.asarray(getattr(A, "bits", A))
    B = np.asarray(getattr(B, "bits", B))
    p, q = len(A), len(B)
    return np.hstack([np.repeat(A, q, axis=0), np.tile(B, (p, 1))])


def _log2(n: int, what: str) -> int:
    k = int(round(math.log2(n))) if n > 0 else -1
    if k < 0 or 2**k != n:
        raise ValueError(f"{what} must be a power of two, got {n}")
    return k


def gray_rectangular(spec) -> Labeling:
    """Product Gray labeling of a rectangular APSK constellation.

    Ring bits come from the reflected code over rings, phase bits from the
    reflected code over positions within a ring.
    """
    l = spec.ring_sizes
    if len(l) < 2 or len(set(l)) != 1:
        raise ValueError(f"labeling needs equal ring sizes and at least two rings, got {l}")
    K = _log2(len(l), "number of rings")
    n = _log2(l[0], "points per ring")
    return Labeling(direct_product(_block(K), _block(n)))


def proposed_phase_offsets(spec, thresholds, harmonics) -> np.ndarray:
    """Phase offsets that centre each ring's decision sectors on its PDF.

    ``phi_0 = 0`` and, for ``k >= 1``,
    ``phi_k = phi_{k-1} + theta_c(mu_k, r_{k-1}) - theta_c(mu_k, r_k)``,
    where ``mu_k`` is the threshold between rings ``k-1`` and ``k``.
    Results are wrapped to ``[0, 2 pi)``.

    ``harmonics`` is a :class:`HarmonicsBank` or a mapping from radius to
    harmonics objects.
    """
    l = spec.ring_sizes
    if len(l) < 2 or len(set(l)) != 1:
        raise ValueError("the phase-offset rule is defined for rectangular APSK with K >= 2")
    radii = np.asarray(spec.radii, dtype=float)

    def angle(mu, r):
        try:
            h = harmonics[r]
        except KeyError:
            raise ValueError(f"no harmonics for ring radius {r:.6g}") from None
        return float(h.correction_angle(np.array([mu]))[0])

    phi = np.zeros(len(l))
    for k in range(1, len(l)):
        mu = thresholds.mu[k]
        phi[k] = phi[k - 1] + angle(mu, radii[k - 1]) - angle(mu, radii[k])
    return np.mod(phi, 2 * np.pi)


def _bep_batch(codes, P, m):
    # codes: (n, M) integer labels; BEP for every candidate
    labels = np.arange(2**m)
    table = hamming_distances((labels[:, None] >> np.arange(m - 1, -1, -1)) & 1)
    d = table[codes[:, :, None], codes[:, None, :]]
    return np.einsum("nij,ij->n", d, P) / (m * P.shape[0])


def exhaustive_labeling_search(T: TransitionMatrix, prune: bool = True,
                               chunk: int = 4096) -> tuple:
    """Labeling with the lowest BEP under ``T``, by full enumeration.

    With ``prune`` only one labeling per class of bit-column permutations
    and complements is evaluated (these leave the BEP unchanged): the
    first symbol gets the all-zero label and the assignment must be the
    lexicographically smallest among its column permutations. Ties are
    resolved toward the lexicographically smallest bit matrix.

    Returns
    -------
    (Labeling, float)
    """
    P = np.asarray(T.probabilities, dtype=float)
    M = P.shape[0]
    if M > MAX_SEARCH_M:
        raise ValueError(f"exhaustive search is limited to M <= {MAX_SEARCH_M}, got {M}")
    m = _log2(M, "M")
    if m == 0:
        raise ValueError("a labeling needs at least two symbols")
    if prune:
        candidates = np.array([(0, *p) for p in itertools.permutations(range(1, M))])
        candidates = candidates[_column_canonical(candidates, m)]
    else:
        candidates = np.array(list(itertools.permutations(range(M))))
    best_val, best_code = math.inf, None
    for lo in range(0, len(candidates), chunk):
        block = candidates[lo:lo + chunk]
        vals = _bep_batch(block, P, m)
        i = int(np.argmin(vals))
        # candidates are generated in lexicographic order, so the first
        # minimum is the smallest bit matrix among exact ties
        if vals[i] < best_val:
            best_val, best_code = float(vals[i]), block[i]
    bits = ((best_code[:, None] >> np.arange(m - 1, -1, -1)) & 1).astype(np.int8)
    return Labeling(bits), best_val


def _column_canonical(codes, m):
    """Mask of rows not exceeded lexicographically by any column permutation."""
    bits = (codes[..., None] >> np.arange(m - 1, -1, -1)) & 1
    weights = 1 << np.arange(m - 1, -1, -1)
    keep = np.ones(len(codes), dtype=bool)
    for perm in itertools.permutations(range(m)):
        permuted = bits[..., list(perm)] @ weights
        diff = permuted - codes
        # first nonzero entry decides the lexicographic comparison
        first = np.argmax(diff != 0, axis=1)
        lead = diff[np.arange(len(codes)), first]
        keep &= lead >= 0
    return keep
