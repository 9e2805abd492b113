"""IDM-based safety gaps, chance-constraint margins, and mode hysteresis.

The planner keeps a speed-dependent minimum gap to every surrounding
vehicle.  Gap uncertainty from the prediction layer is absorbed by a
Gaussian quantile margin (the deterministic equivalent of a per-step chance
constraint).  Because the nominal margin moves with the ego speed, a
naive controller chatters near the constraint boundary; a per-vehicle
corrective mode with a trigger/release band and a *frozen* release
threshold removes the chatter.  The release threshold is frozen at the
instant the mode engages and is not refreshed while it stays engaged,
which is what rules out fast trigger/release cycles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

from scipy.stats import norm

__all__ = [
    "IdmParams",
    "RiskParams",
    "CorrectiveState",
    "HysteresisState",
    "idm_gap",
    "hard_margin",
    "bandwidth",
    "thresholds",
    "gap_sign",
    "signed_gap",
    "update_corrective",
]


@dataclass(frozen=True)
class IdmParams:
    """Parameters of the intelligent-driver-model desired gap."""

    jam_distance: float = 2.0  # [m] minimum standstill gap d0
    headway: float = 1.0  # [s] desired time headway
    max_accel: float = 2.0  # [m/s2] IDM acceleration scale
    comfort_decel: float = 3.0  # [m/s2] IDM braking scale

    def __post_init__(self) -> None:
        if self.jam_distance < 0:
            raise ValueError("jam distance must be nonnegative")
        if self.headway < 0:
            raise ValueError("headway must be nonnegative")
        if self.max_accel <= 0 or self.comfort_decel <= 0:
            raise ValueError("IDM acceleration scales must be positive")


@dataclass(frozen=True)
class RiskParams:
    """Chance-constraint level and hysteresis band geometry.

    ``epsilon`` is the per-step probability budget for the gap dropping
    below its IDM floor.  The band width scales with the IDM gap, clamped
    to [band_min, band_max]; trigger and release thresholds sit at
    ``trigger_scale`` and ``release_scale`` bands above the hard margin.
    """

    epsilon: float = 0.05
    band_ratio: float = 0.5  # band = clamp(band_ratio * d_idm, ...)
    band_min: float = 6.0  # [m]
    band_max: float = 22.0  # [m]
    trigger_scale: float = 1.0
    release_scale: float = 1.4
    z: float = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not 0 < self.epsilon < 0.5:
            raise ValueError("epsilon must lie in (0, 0.5)")
        if self.band_min <= 0 or self.band_max < self.band_min:
            raise ValueError("band bounds must satisfy 0 < band_min <= band_max")
        if not 0 < self.band_ratio < 1:
            raise ValueError("band ratio must lie in (0, 1)")
        if self.release_scale <= self.trigger_scale:
            raise ValueError("release threshold must sit above the trigger threshold")
        if self.trigger_scale < 0:
            raise ValueError("trigger scale must be nonnegative")
        # Standard normal quantile of 1 - epsilon, cached because it sits on
        # the per-decision hot path.
        object.__setattr__(self, "z", float(norm.ppf(1.0 - self.epsilon)))


@dataclass(frozen=True)
class CorrectiveState:
    """Per-vehicle hysteresis memory.

    While ``active``, ``release_gap`` holds the release threshold frozen at
    trigger time, ``band`` the slack budget d_HS = release - trigger, and
    ``idm_ref`` the IDM gap that sized those thresholds, all in meters.
    Freezing ``idm_ref`` keeps the relaxed-layer cap for this vehicle from
    drifting with the ego speed while the entry is held.
    """

    active: bool = False
    release_gap: Optional[float] = None
    band: Optional[float] = None
    idm_ref: Optional[float] = None


INACTIVE = CorrectiveState()


@dataclass
class HysteresisState:
    """Corrective-mode entries keyed by vehicle id.

    Entries for vehicles that left the perception window or stopped being
    lane-relevant are dropped; a missing entry reads as inactive.
    """

    entries: dict[str, CorrectiveState] = field(default_factory=dict)

    def get(self, sv_id: str) -> CorrectiveState:
        return self.entries.get(sv_id, INACTIVE)

    def put(self, sv_id: str, entry: CorrectiveState) -> None:
        if entry.active:
            self.entries[sv_id] = entry
        else:
            self.entries.pop(sv_id, None)

    def active_ids(self) -> tuple[str, ...]:
        return tuple(sorted(k for k, e in self.entries.items() if e.active))

    def copy(self) -> "HysteresisState":
        return HysteresisState(entries=dict(self.entries))


def idm_gap(v_ev: float, v_sv: float, p: IdmParams) -> float:
    """IDM desired gap of the ego at speed ``v_ev`` behind a vehicle at ``v_sv``.

    The dynamic term is floored at zero, so the gap never drops below
    jam_distance even when the front vehicle is pulling away.
    """
    dynamic = v_ev * p.headway + v_ev * (v_ev - v_sv) / (
        2.0 * math.sqrt(p.max_accel * p.comfort_decel)
    )
    return p.jam_distance + max(0.0, dynamic)


def hard_margin(d_idm: float, variance: float, p: RiskParams) -> float:
    """Deterministic equivalent of the gap chance constraint.

    For a Gaussian gap with the given variance, keeping the mean above this
    margin bounds the probability of the realized gap falling below
    ``d_idm`` by epsilon.
    """
    if variance < 0:
        raise ValueError("variance must be nonnegative")
    return d_idm + p.z * math.sqrt(variance)


def bandwidth(d_idm: float, p: RiskParams) -> float:
    """Hysteresis band width: proportional to the IDM gap, clamped."""
    return min(max(p.band_ratio * d_idm, p.band_min), p.band_max)


def thresholds(d_hc: float, band: float, p: RiskParams) -> tuple[float, float]:
    """(trigger, release) gaps for the current hard margin and band."""
    trigger = d_hc + p.trigger_scale * band
    release = d_hc + p.release_scale * band
    return trigger, release


def gap_sign(x_ev: float, x_sv: float) -> int:
    """+1 when the ego is behind the other vehicle, -1 when ahead.

    Exact ties count as "ego behind"; the sign is evaluated once per
    decision from current positions and held fixed through the solve.
    """
    return 1 if x_sv >= x_ev else -1


def signed_gap(x_ev: float, x_sv: float, sign: int) -> float:
    """Longitudinal gap oriented so that larger is safer."""
    return sign * (x_sv - x_ev)


def update_corrective(
    entry: CorrectiveState,
    predicted_gaps: Iterable[float],
    trigger_gap: float,
    release_gap_now: float,
    idm_ref_now: float = 0.0,
) -> CorrectiveState:
    """One hysteresis update for a single front vehicle.

    ``predicted_gaps`` are the behind-case mean gaps over the horizon.
    Inactive -> active when any predicted gap dips below the trigger; the
    release threshold, the slack budget, and the IDM reference gap are
    frozen at that instant.  Active -> inactive only when every predicted
    gap clears the *frozen* release threshold.  Note the asymmetry:
    triggering is existential, releasing is universal, and the release
    threshold does not track the current speed while active.
    """
    gaps = list(predicted_gaps)
    if not gaps:
        return entry
    if not entry.active:
        if any(g < trigger_gap for g in gaps):
            return CorrectiveState(
                active=True,
                release_gap=release_gap_now,
                band=release_gap_now - trigger_gap,
                idm_ref=idm_ref_now,
            )
        return entry
    assert entry.release_gap is not None
    if all(g >= entry.release_gap for g in gaps):
        return INACTIVE
    return entry
