"""Discrete memoryless channel with nonlinear phase noise.

The observation is ``Y = (X + Z) exp(-1j * Phi)`` where ``Z = Z_N`` is the
accumulated ASE noise after ``N`` amplified spans and

    Phi = (gamma * L / N) * sum_{i=1..N} |X + Z_i|**2,

with ``Z_i`` the partial sums of i.i.d. circular Gaussians of variance
``sigma0**2`` per real dimension.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

__all__ = [
    "ChannelParams",
    "ChannelSample",
    "noise_variance",
    "sample_channel",
    "mean_nlpn",
    "spawn_generators",
]

# Table of physical constants (SI units, lengths in km).
GAMMA = 1.2  # 1/(W km)
N_SP = 1.41
PLANCK = 6.626e-34  # J s
FREQUENCY = 1.936e14  # Hz
LOSS = 0.0578  # 1/km
BANDWIDTH = 42.7e9  # Hz

DEFAULT_SPANS = 100
DISTRIBUTED_SPANS = 1000

# complex draws per chunk in the sampler, bounds peak memory
_CHUNK_DRAWS = 2_000_000


def noise_variance(
    length_km: float,
    n_sp: float = N_SP,
    planck: float = PLANCK,
    frequency: float = FREQUENCY,
    loss: float = LOSS,
    bandwidth: float = BANDWIDTH,
) -> float:
    """Total ASE noise variance ``2 * n_sp * h * nu * alpha * dnu * L`` in W."""
    if length_km < 0:
        raise ValueError(f"fiber length must be nonnegative, got {length_km}")
    for name, v in dict(n_sp=n_sp, planck=planck, frequency=frequency, loss=loss,
                        bandwidth=bandwidth).items():
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v}")
    return 2.0 * n_sp * planck * frequency * loss * bandwidth * length_km


@dataclass(frozen=True)
class ChannelParams:
    """Physical parameters of the fiber link.

    ``noise_var`` (total ASE variance sigma**2 in W) is derived from the
    constants unless given explicitly, which is only useful for
    idealised test channels.
    """

    length_km: float
    n_spans: int = DEFAULT_SPANS
    gamma: float = GAMMA
    n_sp: float = N_SP
    planck: float = PLANCK
    frequency: float = FREQUENCY
    loss: float = LOSS
    bandwidth: float = BANDWIDTH
    noise_var: float | None = field(default=None)

    def __post_init__(self):
        if int(self.n_spans) != self.n_spans or self.n_spans < 1:
            raise ValueError(f"n_spans must be a positive integer, got {self.n_spans}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")
        if self.length_km < 0:
            raise ValueError(f"length must be nonnegative, got {self.length_km}")
        if self.noise_var is None:
            s2 = noise_variance(self.length_km, self.n_sp, self.planck, self.frequency,
                                self.loss, self.bandwidth)
            object.__setattr__(self, "noise_var", float(s2))
        elif self.noise_var < 0:
            raise ValueError(f"noise variance must be nonnegative, got {self.noise_var}")
        object.__setattr__(self, "n_spans", int(self.n_spans))

    @property
    def noise_psd(self) -> float:
        """ASE spectral density ``N0 = n_sp h nu alpha`` in W/(km Hz)."""
        return self.n_sp * self.planck * self.frequency * self.loss

    @property
    def sigma2(self) -> float:
        return float(self.noise_var)

    @property
    def span_variance(self) -> float:
        """Per-span, per-dimension variance ``sigma0**2 = sigma**2 / (2N)``."""
        return self.sigma2 / (2 * self.n_spans)

    @property
    def nonlinear_scale(self) -> float:
        """``gamma * L`` in 1/W."""
        return self.gamma * self.length_km

    def replace(self, **changes) -> "ChannelParams":
        data = asdict(self)
        if "noise_var" not in changes and any(
            k in changes for k in ("length_km", "n_sp", "planck", "frequency", "loss", "bandwidth")
        ):
            data["noise_var"] = None
        data.update(changes)
        return ChannelParams(**data)

    def key(self) -> tuple:
        return tuple(getattr(self, f.name) for f in fields(self))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ChannelParams":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown channel fields: {sorted(unknown)}")
        return cls(**data)

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_json(cls, text: str) -> "ChannelParams":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class ChannelSample:
    """Channel output ``y`` with the realised nonlinear phase ``phase``."""

    y: np.ndarray
    phase: np.ndarray


def sample_channel(x, params: ChannelParams, rng: np.random.Generator) -> ChannelSample:
    """Draw one channel realisation per entry of ``x``.

    Parameters
    ----------
    x : complex scalar or array
        Channel inputs.
    params : ChannelParams
    rng : numpy.random.Generator

    Returns
    -------
    ChannelSample
        Arrays with the shape of ``x``.
    """
    x = np.asarray(x, dtype=complex)
    flat = x.reshape(-1)
    n, N = flat.size, params.n_spans
    s0 = np.sqrt(params.span_variance)
    scale = params.nonlinear_scale / N
    y = np.empty(n, dtype=complex)
    phase = np.empty(n, dtype=float)
    rows = max(1, _CHUNK_DRAWS // N)
    for start in range(0, n, rows):
        xs = flat[start:start + rows]
        m = xs.size
        re = rng.standard_normal((m, N))
        im = rng.standard_normal((m, N))
        # partial sums Z_i, shifted by x: the field after span i
        np.cumsum(re, axis=1, out=re)
        np.cumsum(im, axis=1, out=im)
        re *= s0
        im *= s0
        re += xs.real[:, None]
        im += xs.imag[:, None]
        phi = scale * (np.einsum("ij,ij->i", re, re) + np.einsum("ij,ij->i", im, im))
        y[start:start + m] = (re[:, -1] + 1j * im[:, -1]) * np.exp(-1j * phi)
        phase[start:start + m] = phi
    return ChannelSample(y.reshape(x.shape), phase.reshape(x.shape))


def mean_nlpn(x, params: ChannelParams):
    """Expected nonlinear phase ``gamma L (|x|**2 + sigma0**2 (N + 1))``."""
    x = np.asarray(x)
    return params.nonlinear_scale * (np.abs(x) ** 2 + params.span_variance * (params.n_spans + 1))


def spawn_generators(seed, n: int) -> list[np.random.Generator]:
    """Independent PCG64 streams derived from one master seed."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(n)]
