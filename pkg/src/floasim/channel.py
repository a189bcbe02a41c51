"""Block Rayleigh fading and AWGN for the multiple-access channel.

Phases are assumed compensated at the transmitters, so only magnitudes are
generated.  With ``h ~ CN(0, sigma^2)`` the real and imaginary parts are each
``N(0, sigma^2)``, which makes ``|h|^2`` exponential with mean ``2 sigma^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .rng import RngStreams


@dataclass(frozen=True)
class ChannelProfile:
    sigmas: np.ndarray
    noise_std: float

    def __post_init__(self):
        sigmas = np.atleast_1d(np.asarray(self.sigmas, dtype=np.float64))
        if sigmas.ndim != 1 or not np.all(sigmas > 0) or not np.all(np.isfinite(sigmas)):
            raise UsageError("sigmas must be a vector of positive finite values")
        if not (math.isfinite(self.noise_std) and self.noise_std >= 0):
            raise UsageError("noise_std must be finite and >= 0")
        object.__setattr__(self, "sigmas", sigmas)

    @property
    def num_workers(self) -> int:
        return self.sigmas.shape[0]


@dataclass(frozen=True)
class ChannelRound:
    magnitudes: np.ndarray  # |h_i|, length U
    noise: np.ndarray  # z_t, length D


def rayleigh_magnitudes(sigmas, rng: np.random.Generator, size=None) -> np.ndarray:
    """Draw ``|h| = sqrt(a^2 + b^2)`` with ``a, b ~ N(0, sigma^2)``.

    ``size`` prepends extra dimensions, which is how the Monte Carlo checks
    draw many rounds at once.
    """
    sigmas = np.asarray(sigmas, dtype=np.float64)
    shape = sigmas.shape if size is None else tuple(np.atleast_1d(size)) + sigmas.shape
    a = rng.standard_normal(shape)
    b = rng.standard_normal(shape)
    return sigmas * np.hypot(a, b)


def draw_channels(profile: ChannelProfile, t: int, streams: RngStreams, dim: int) -> ChannelRound:
    """Channel magnitudes and noise for round ``t``.

    Worker ``i``'s magnitude comes from stream ``("channel", t, i)`` and the noise
    from ``("noise", t)``, so the draw is a pure function of (seed, t).
    """
    mags = np.empty(profile.num_workers)
    for i, sigma in enumerate(profile.sigmas):
        mags[i] = rayleigh_magnitudes(sigma, streams.generator("channel", t, i))
    if profile.noise_std == 0:
        noise = np.zeros(dim)
    else:
        noise = profile.noise_std * streams.generator("noise", t).standard_normal(dim)
    return ChannelRound(mags, noise)


def exponential_rates(profile: ChannelProfile) -> np.ndarray:
    """Rates ``lambda_i = 1 / (2 sigma_i^2)`` of the exponential law of ``|h_i|^2``."""
    return 1.0 / (2.0 * profile.sigmas**2)


def expected_min_gain(profile: ChannelProfile) -> float:
    """``E[min_i |h_i|^2] = 1 / sum_i lambda_i``."""
    return 1.0 / float(np.sum(exponential_rates(profile)))


def expected_magnitude(sigma) -> np.ndarray | float:
    """Rayleigh mean ``E|h| = sigma * sqrt(pi / 2)``."""
    return np.asarray(sigma) * math.sqrt(math.pi / 2.0)


def snr_to_noise_std(p_max: float, dim: int, snr_db: float) -> float:
    """Noise std ``z`` such that ``p_max / (D z^2)`` equals the given SNR."""
    if not p_max > 0 or dim < 1:
        raise UsageError("p_max must be > 0 and dim >= 1")
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    return math.sqrt(p_max / (dim * 10.0 ** (snr_db / 10.0)))
