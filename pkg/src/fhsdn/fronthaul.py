"""In-band wireless fronthaul timing model.

The controller and the base stations share the downlink sub-carriers, so
control traffic costs time: each frame starts with every BS uploading its
statistics (equal power split over all sub-carriers, mutually interfering at
the controller) and ends with the controller broadcasting recommendations.
The resulting round-trip time is quantized onto a finite overhead set; if
even the largest overhead cannot accommodate it, the frame carries no
recommendation at all.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


class DegenerateChannelError(ValueError):
    """All sub-carriers have zero spectral efficiency; no finite time works."""


@dataclass(frozen=True)
class FronthaulConfig:
    """Static fronthaul parameters.

    ``r_unit`` is the rate (bit/s/Hz) needed to carry one statistical value;
    ``tau_levels`` the allowed overhead values in slots, strictly increasing.
    Powers are per sub-carrier, in mW.
    """

    r_unit: float
    tau_levels: tuple[float, ...]
    controller_power_per_subcarrier_mw: float
    bs_power_per_subcarrier_mw: float
    noise_power_mw: float

    def __post_init__(self):
        if not self.r_unit > 0:
            raise ValueError("r_unit must be positive")
        if len(self.tau_levels) < 1 or any(t <= 0 for t in self.tau_levels):
            raise ValueError("tau_levels must be positive")
        if any(b <= a for a, b in zip(self.tau_levels, self.tau_levels[1:])):
            raise ValueError("tau_levels must be strictly increasing")
        for name in (
            "controller_power_per_subcarrier_mw",
            "bs_power_per_subcarrier_mw",
            "noise_power_mw",
        ):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class FronthaulOutcome:
    """Per-frame fronthaul timing result.

    ``tau_quantized`` is ``None`` when the raw round trip exceeds the largest
    allowed overhead, i.e. the BSs never receive a recommendation.
    """

    tau_upload: tuple[float, ...]
    tau_download: tuple[float, ...]
    tau_raw: float
    tau_quantized: Optional[float]

    def __post_init__(self):
        expected = max(self.tau_upload) + max(self.tau_download)
        if not math.isclose(self.tau_raw, expected, rel_tol=1e-12):
            raise ValueError("tau_raw must be max upload plus max download")
        if self.tau_quantized is not None and self.tau_quantized < self.tau_raw:
            raise ValueError("quantized overhead may not undercut the raw one")


def upload_target_rate(bs_statistics_count: int, r_unit: float) -> float:
    """Aggregate upload rate for a BS shipping ``bs_statistics_count`` values."""
    if bs_statistics_count < 1:
        raise ValueError("bs_statistics_count must be >= 1")
    return bs_statistics_count * r_unit


def download_target_rate(t0: int, r_unit: float) -> float:
    """Download rate for one recommendation per slot of a ``t0``-slot frame."""
    if t0 < 1:
        raise ValueError("t0 must be >= 1")
    return t0 * r_unit


def upload_time(
    r_up: float,
    direct_gains: Sequence[float],
    interferer_gains: Sequence[Sequence[float]],
    bs_power_mw: float,
    interferer_powers_mw: Sequence[float],
    noise_power_mw: float,
) -> float:
    """Slots needed for one BS to upload at target rate ``r_up``.

    ``direct_gains[s]`` is the uploading BS's gain to the controller on
    sub-carrier ``s``; ``interferer_gains[i][s]`` the gain of the i-th other
    BS, which uploads simultaneously with per-sub-carrier power
    ``interferer_powers_mw[i]``.
    """
    direct = np.asarray(direct_gains, dtype=float)
    interf = np.asarray(interferer_gains, dtype=float)
    if interf.size:
        powers = np.asarray(interferer_powers_mw, dtype=float)
        interference = powers @ interf
    else:
        interference = np.zeros_like(direct)
    sinr = bs_power_mw * direct / (noise_power_mw + interference)
    total_se = float(np.log2(1.0 + sinr).sum())
    if total_se <= 0.0:
        raise DegenerateChannelError("zero spectral efficiency on every sub-carrier")
    return r_up / total_se


def download_time(
    r_down: float,
    gains: Sequence[float],
    num_bs: int,
    controller_power_mw: float,
    noise_power_mw: float,
) -> float:
    """Slots needed to deliver ``r_down`` to one BS.

    The controller splits its power equally over all BSs and sub-carriers, so
    a BS sees the other ``num_bs - 1`` shares as interference.
    """
    if num_bs < 1:
        raise ValueError("num_bs must be >= 1")
    g = np.asarray(gains, dtype=float)
    signal = controller_power_mw * g
    denom = num_bs * noise_power_mw + (num_bs - 1) * controller_power_mw * g
    total_se = float(np.log2(1.0 + signal / denom).sum())
    if total_se <= 0.0:
        raise DegenerateChannelError("zero spectral efficiency on every sub-carrier")
    return r_down / total_se


def quantize_overhead(
    tau_raw: float, tau_levels: Sequence[float]
) -> Optional[float]:
    """Smallest allowed overhead covering ``tau_raw``; ``None`` if none does."""
    if not tau_raw > 0:
        raise ValueError("tau_raw must be positive")
    for level in tau_levels:
        if level >= tau_raw:
            return level
    return None


def round_trip_overhead(
    tau_uploads: Sequence[float],
    tau_downloads: Sequence[float],
    tau_levels: Sequence[float],
) -> FronthaulOutcome:
    """Combine per-BS upload/download times into the frame overhead."""
    tau_raw = max(tau_uploads) + max(tau_downloads)
    return FronthaulOutcome(
        tau_upload=tuple(tau_uploads),
        tau_download=tuple(tau_downloads),
        tau_raw=tau_raw,
        tau_quantized=quantize_overhead(tau_raw, tau_levels),
    )
