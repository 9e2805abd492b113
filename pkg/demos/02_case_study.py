"""A three-lane case study: slow leader, faster traffic, one overtake.

The ego starts in the middle lane behind a truck-like leader doing
12 m/s while its own reference is 20 m/s.  A faster car comes up the
left lane and another cruiser sits to the right, so the planner has to
price the overtake against both the braking alternative and the gap it
would cut into.  The run writes the full decision trace plus trajectory
and speed figures next to this script.
"""
import pathlib

from lanegate.hmdp import LaneGeometry
from lanegate.mpc import CostWeights, EngineParams
from lanegate.report import plot_speed_profile, plot_trajectories
from lanegate.sim import SimConfig, VehicleInit, run_episode

OUT = pathlib.Path(__file__).resolve().parent / "out"


def main():
    OUT.mkdir(exist_ok=True)
    geom = LaneGeometry(3)
    vehicles = [
        VehicleInit("ev", 2, 0.0, 20.0, kind="ev"),
        VehicleInit("sv01", 2, 45.0, 12.0, speed_schedule=((0.0, 12.0),)),
        VehicleInit("sv02", 1, -25.0, 24.0, desired_speed=24.0),
        VehicleInit("sv03", 3, 15.0, 16.0, desired_speed=16.0),
    ]
    params = EngineParams(weights=CostWeights(v_ref=20.0))
    result = run_episode(geom, vehicles, params, SimConfig(duration=30.0), seed=5)

    summary = result.summary
    print(
        f"{summary.decisions} decisions: {summary.layer_counts}, "
        f"{summary.lane_changes} ego lane changes, "
        f"mean speed {summary.avg_speed:.2f} m/s, collision: {summary.collided_ev}"
    )
    for d in result.trace.by_type("decision"):
        if d["action"][0] != 0:
            print(f"  t={d['t']:5.1f}  lane shift {tuple(d['action'])} ({d['layer']})")

    trace_path = OUT / "case_study_trace.jsonl"
    trace_path.write_text(result.trace.to_jsonl())
    plot_trajectories(result.trace, OUT / "case_study_paths.svg")
    plot_speed_profile(result.trace, OUT / "case_study_speeds.svg")
    print(f"artifacts in {OUT}/: case_study_trace.jsonl, case_study_paths.svg, "
          f"case_study_speeds.svg")


if __name__ == "__main__":
    main()
