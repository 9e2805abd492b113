"""Discrete maneuver lattice and the kinematic maps indexed by it.

A vehicle carries a hybrid state: a discrete maneuver state (lane index,
longitudinal mode) plus continuous kinematics (x, y, v).  One-step actions
move the maneuver state on a clipped integer lattice; a selector pairs the
lateral action with the *post-transition* longitudinal mode and picks the
constant-acceleration map that advances the kinematics.

Conventions used throughout the package:

* lanes are indexed 1..n, lane 1 is the leftmost; lane i is centered at
  y = (n - i) * lane_width, so the rightmost lane sits at y = 0
* longitudinal mode -1 decelerates, 0 cruises, +1 accelerates
* an action moves at most one of (lane, mode), each by at most one step;
  transitions that would leave the lattice are discarded, never saturated
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

__all__ = [
    "Action",
    "ManeuverState",
    "Selector",
    "KinematicState",
    "LaneGeometry",
    "KinematicParams",
    "ONE_STEP_ACTIONS",
    "clip_step",
    "feasible_actions",
    "maneuver_transition",
    "make_selector",
    "integrate_clamped",
    "kinematic_step",
]


@dataclass(frozen=True, order=True)
class Action:
    """One-step maneuver action (lateral shift, longitudinal mode shift)."""

    lat: int = 0
    long: int = 0

    def is_one_step(self) -> bool:
        """At most one component nonzero, each in {-1, 0, +1}."""
        if self.lat not in (-1, 0, 1) or self.long not in (-1, 0, 1):
            return False
        return self.lat == 0 or self.long == 0

    def key(self) -> tuple[int, int]:
        return (self.lat, self.long)


# The five admissible one-step actions, in lexicographic order.  Every
# enumeration in the package iterates this tuple so results are deterministic.
ONE_STEP_ACTIONS: tuple[Action, ...] = (
    Action(-1, 0),
    Action(0, -1),
    Action(0, 0),
    Action(0, 1),
    Action(1, 0),
)

KEEP = Action(0, 0)


@dataclass(frozen=True)
class ManeuverState:
    """Discrete maneuver state: target lane index and longitudinal mode.

    While a lane change is executing, ``lane`` already names the target
    lane; the continuous y catches up over the low-level maneuver time.
    """

    lane: int
    long_mode: int = 0

    def __post_init__(self) -> None:
        if self.long_mode not in (-1, 0, 1):
            raise ValueError(f"longitudinal mode must be -1, 0 or +1, got {self.long_mode}")
        if self.lane < 1:
            raise ValueError(f"lane index must be >= 1, got {self.lane}")


@dataclass(frozen=True)
class Selector:
    """Kinematic map selector: lateral action and post-transition mode.

    Deliberately asymmetric: the lateral component is the *action* taken
    this step, the longitudinal component is the mode that results from it.
    Acceleration therefore bills by the state being occupied, lateral moves
    by the transition itself.
    """

    lat: int
    long_mode: int


@dataclass(frozen=True)
class KinematicState:
    """Continuous vehicle state: longitudinal/lateral position and speed."""

    x: float
    y: float
    v: float


@dataclass(frozen=True)
class LaneGeometry:
    """Lane count and width of the (straight) road segment."""

    lane_count: int
    lane_width: float = 4.0  # [m]

    def __post_init__(self) -> None:
        if self.lane_count < 1:
            raise ValueError("need at least one lane")
        if self.lane_width <= 0:
            raise ValueError("lane width must be positive")

    def lane_center(self, lane: int) -> float:
        """Center line of ``lane`` (lane 1 leftmost, lane n at y=0)."""
        if not 1 <= lane <= self.lane_count:
            raise ValueError(f"lane {lane} outside 1..{self.lane_count}")
        return (self.lane_count - lane) * self.lane_width

    def nearest_lane(self, y: float) -> int:
        lane = self.lane_count - round(y / self.lane_width)
        return min(max(int(lane), 1), self.lane_count)


@dataclass(frozen=True)
class KinematicParams:
    """Acceleration magnitudes and the speed envelope of the maps."""

    accel: float = 2.0  # [m/s2] applied in mode +1
    decel: float = 3.0  # [m/s2] magnitude applied in mode -1
    v_min: float = 0.0  # [m/s]
    v_max: float = 45.0  # [m/s]

    def __post_init__(self) -> None:
        if self.accel <= 0 or self.decel <= 0:
            raise ValueError("acceleration magnitudes must be positive")
        if self.v_min > self.v_max:
            raise ValueError("empty speed envelope")

    def mode_accel(self, long_mode: int) -> float:
        if long_mode == 1:
            return self.accel
        if long_mode == -1:
            return -self.decel
        return 0.0


def clip_step(value: int, delta: int, lo: int, hi: int) -> Optional[int]:
    """Shift ``value`` by ``delta`` within [lo, hi]; None if out of range.

    Out-of-range transitions are discarded rather than saturated: asking for
    a lane left of lane 1 yields no transition at all, not lane 1.
    """
    shifted = value + delta
    if lo <= shifted <= hi:
        return shifted
    return None


def feasible_actions(
    m: ManeuverState,
    geom: LaneGeometry,
    lane_change_in_progress: bool = False,
) -> tuple[Action, ...]:
    """All one-step actions admissible from ``m``, lexicographically sorted.

    The keep action (0, 0) is always present.  While a lane change is
    executing, lateral actions are removed (the low-level layer is latched
    to the running maneuver).
    """
    out = []
    for action in ONE_STEP_ACTIONS:
        if action.lat != 0:
            if lane_change_in_progress:
                continue
            if clip_step(m.lane, action.lat, 1, geom.lane_count) is None:
                continue
        if action.long != 0 and clip_step(m.long_mode, action.long, -1, 1) is None:
            continue
        out.append(action)
    return tuple(out)


def maneuver_transition(m: ManeuverState, action: Action, geom: LaneGeometry) -> ManeuverState:
    """Apply a one-step action to the maneuver state.

    Raises ValueError for actions outside the feasible set (two components
    nonzero, or a shift that leaves the lattice).
    """
    if not action.is_one_step():
        raise ValueError(f"{action} is not a one-step action")
    lane = clip_step(m.lane, action.lat, 1, geom.lane_count)
    mode = clip_step(m.long_mode, action.long, -1, 1)
    if lane is None or mode is None:
        raise ValueError(f"{action} infeasible from {m} on {geom.lane_count} lanes")
    return ManeuverState(lane=lane, long_mode=mode)


def make_selector(action: Action, long_mode: int) -> Selector:
    """Pair the lateral action with the post-transition longitudinal mode."""
    return Selector(lat=action.lat, long_mode=long_mode + action.long)


def integrate_clamped(
    x: float,
    v: float,
    accel: float,
    dt: float,
    v_min: float,
    v_max: float,
) -> tuple[float, float]:
    """Constant-acceleration step with the speed clamped to [v_min, v_max].

    When the clamp binds mid-step the acceleration stops at the crossing
    time, so position advances with the clamped speed for the remainder.
    The simulator's low-level executor and the planner's one-step prediction
    both call this function, which is what makes them agree exactly.
    """
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    if accel > 0 and v + accel * dt > v_max:
        t_hit = max((v_max - v) / accel, 0.0)
        x_new = x + v * t_hit + 0.5 * accel * t_hit * t_hit + v_max * (dt - t_hit)
        return x_new, v_max
    if accel < 0 and v + accel * dt < v_min:
        t_hit = max((v_min - v) / accel, 0.0)
        x_new = x + v * t_hit + 0.5 * accel * t_hit * t_hit + v_min * (dt - t_hit)
        return x_new, v_min
    return x + v * dt + 0.5 * accel * dt * dt, v + accel * dt


def kinematic_step(
    kin: KinematicState,
    selector: Selector,
    dt: float,
    params: KinematicParams,
    geom: LaneGeometry,
    target_lane: Optional[int] = None,
) -> KinematicState:
    """One prediction-level step of the selector-indexed kinematic map.

    Longitudinal motion integrates the mode's constant acceleration with the
    speed envelope clamp.  A nonzero lateral action jumps y to the target
    lane center in this single step; prediction does not model the lateral
    transient (the low-level layer spreads it over the maneuver time).
    """
    a = params.mode_accel(selector.long_mode)
    x_new, v_new = integrate_clamped(kin.x, kin.v, a, dt, params.v_min, params.v_max)
    y_new = kin.y
    if selector.lat != 0:
        if target_lane is None:
            raise ValueError("lateral step requires the target lane")
        y_new = geom.lane_center(target_lane)
    return KinematicState(x=x_new, y=y_new, v=v_new)
