"""Shared builders for the test suite.

Most tests need a snapshot of "an ego plus a few observed vehicles" and a
parameter bundle; these helpers keep the construction noise out of the
individual tests.  Everything is deterministic: no fixture draws random
numbers without an explicit seed.
"""

from __future__ import annotations

import numpy as np
import pytest

from lanegate.hmdp import KinematicState, LaneGeometry, ManeuverState
from lanegate.mpc import DecisionSnapshot, EngineParams, SvObservation


def make_sv(
    sv_id: str,
    lane: int,
    x: float,
    v: float,
    mode: int = 0,
    y: float = None,
    geom: LaneGeometry = None,
    changing: bool = False,
    lane_set: tuple = (),
) -> SvObservation:
    if y is None:
        y = geom.lane_center(lane) if geom is not None else 0.0
    return SvObservation(
        sv_id=sv_id,
        maneuver=ManeuverState(lane, mode),
        kin=KinematicState(x=x, y=y, v=v),
        lane_set=lane_set,
        lane_change_in_progress=changing,
    )


def make_snapshot(
    ev_lane: int,
    ev_x: float,
    ev_v: float,
    svs=(),
    lanes: int = 3,
    ev_mode: int = 0,
    prev_actions=None,
) -> DecisionSnapshot:
    geom = LaneGeometry(lane_count=lanes)
    return DecisionSnapshot(
        geometry=geom,
        ev_maneuver=ManeuverState(ev_lane, ev_mode),
        ev_kin=KinematicState(x=ev_x, y=geom.lane_center(ev_lane), v=ev_v),
        svs=tuple(svs),
        prev_actions=prev_actions,
    )


@pytest.fixture
def params() -> EngineParams:
    return EngineParams()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20260818)
