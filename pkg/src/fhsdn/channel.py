"""Block-fading link model with finite quantized gain levels.

Every link is Rayleigh faded (unit-mean exponential power fading) on top of a
distance-based path loss.  Fading is quantized into a finite set of levels so
that state spaces stay finite: the exponential distribution is split into
equiprobable bins and each bin is represented by its conditional mean, which
preserves the mean link gain exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

# Indoor model at 2.4 GHz: 30*log10(d) + 20*log10(2.4) + 46.
_PATH_LOSS_OFFSET_DB = 20.0 * math.log10(2.4) + 46.0


@dataclass(frozen=True)
class LinkSpec:
    """A transmitter/receiver pair at a fixed distance."""

    tx_id: str
    rx_id: str
    distance_m: float

    def __post_init__(self):
        if not self.distance_m > 0:
            raise ValueError(f"distance_m must be positive, got {self.distance_m}")


@dataclass(frozen=True)
class GainSet:
    """Finite set of linear power-gain levels with their probabilities.

    ``gains`` are strictly increasing representative gains, ``probs`` the bin
    probabilities (summing to one) and ``thresholds`` the gain values
    separating consecutive bins (``len(gains) - 1`` of them).
    """

    gains: tuple[float, ...]
    probs: tuple[float, ...]
    thresholds: tuple[float, ...]

    def __post_init__(self):
        if len(self.gains) < 1:
            raise ValueError("GainSet needs at least one level")
        if len(self.probs) != len(self.gains):
            raise ValueError("gains and probs must have equal length")
        if len(self.thresholds) != len(self.gains) - 1:
            raise ValueError("need exactly len(gains)-1 thresholds")
        if abs(sum(self.probs) - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {sum(self.probs)}, not 1")
        if any(g <= 0 for g in self.gains):
            raise ValueError("gains must be positive")
        if any(b <= a for a, b in zip(self.gains, self.gains[1:])):
            raise ValueError("gains must be strictly increasing")

    @property
    def num_levels(self) -> int:
        return len(self.gains)

    @property
    def max_gain(self) -> float:
        return self.gains[-1]

    @property
    def mean_gain(self) -> float:
        return float(sum(g * p for g, p in zip(self.gains, self.probs)))


@dataclass(frozen=True)
class ChannelRealization:
    """Level indices for every (link, subcarrier) pair of one fading block."""

    levels: dict[tuple, int]

    def level(self, link_key, subcarrier: int) -> int:
        return self.levels[(link_key, subcarrier)]


def path_loss_db(distance_m: float) -> float:
    """Path loss in dB of the indoor propagation model."""
    if not distance_m > 0:
        raise ValueError(f"distance_m must be positive, got {distance_m}")
    return 30.0 * math.log10(distance_m) + _PATH_LOSS_OFFSET_DB


def path_gain(distance_m: float) -> float:
    """Linear power gain corresponding to :func:`path_loss_db`."""
    return 10.0 ** (-path_loss_db(distance_m) / 10.0)


def _exponential_bin_mean(lo: float, hi: float) -> float:
    """Conditional mean of a unit-mean exponential restricted to [lo, hi)."""
    if math.isinf(hi):
        return lo + 1.0
    mass = math.exp(-lo) - math.exp(-hi)
    integral = (lo + 1.0) * math.exp(-lo) - (hi + 1.0) * math.exp(-hi)
    return integral / mass


def quantize_exponential(mean_gain: float, num_levels: int) -> GainSet:
    """Quantize a unit-mean exponential fade, scaled by ``mean_gain``.

    The distribution is split into ``num_levels`` equiprobable bins; each
    level is the conditional mean of its bin.  The resulting mean gain equals
    ``mean_gain`` exactly.
    """
    if num_levels < 2:
        raise ValueError("num_levels must be at least 2")
    if not mean_gain > 0:
        raise ValueError("mean_gain must be positive")
    edges = [-math.log(1.0 - k / num_levels) for k in range(num_levels)]
    edges.append(math.inf)
    gains = tuple(
        mean_gain * _exponential_bin_mean(edges[k], edges[k + 1])
        for k in range(num_levels)
    )
    probs = tuple(1.0 / num_levels for _ in range(num_levels))
    thresholds = tuple(mean_gain * e for e in edges[1:-1])
    return GainSet(gains=gains, probs=probs, thresholds=thresholds)


def build_gain_set(link: LinkSpec, num_levels: int = 2) -> GainSet:
    """Quantized fading levels of ``link`` including its path loss."""
    return quantize_exponential(path_gain(link.distance_m), num_levels)


class ChannelSampler:
    """Draws level indices for a fixed, ordered collection of links.

    The ordering of ``gain_sets`` is part of the determinism contract: the
    same ordering and the same seeded generator produce bit-identical level
    streams.
    """

    def __init__(self, gain_sets: Sequence[GainSet], num_subcarriers: int):
        if num_subcarriers < 1:
            raise ValueError("num_subcarriers must be >= 1")
        self.num_links = len(gain_sets)
        self.num_subcarriers = num_subcarriers
        max_levels = max(gs.num_levels for gs in gain_sets)
        # Cumulative probabilities padded with 1.0 so all rows share a width.
        cum = np.ones((self.num_links, max_levels), dtype=np.float64)
        for i, gs in enumerate(gain_sets):
            cum[i, : gs.num_levels] = np.cumsum(gs.probs)
        self._cum_inner = cum[:, :-1]  # comparing against the last column is a no-op

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """Level index array of shape (num_links, num_subcarriers)."""
        u = rng.random((self.num_links, self.num_subcarriers))
        return (u[:, :, None] >= self._cum_inner[:, None, :]).sum(axis=2)


def sample_realization(
    gain_sets: Mapping[object, GainSet],
    num_subcarriers: int,
    rng: np.random.Generator,
) -> ChannelRealization:
    """Independently draw one level per (link, subcarrier).

    Iteration follows the mapping order of ``gain_sets``; identical mappings
    and identically seeded generators give identical realizations.
    """
    keys = list(gain_sets.keys())
    sampler = ChannelSampler([gain_sets[k] for k in keys], num_subcarriers)
    levels = sampler.sample(rng)
    out = {}
    for i, key in enumerate(keys):
        for s in range(num_subcarriers):
            out[(key, s)] = int(levels[i, s])
    return ChannelRealization(levels=out)
