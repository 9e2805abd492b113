"""Ablate the corrective corridor and count longitudinal mode switches.

Single-lane following behind a leader whose setpoint oscillates between
13 and 17 m/s around the ego's reference of 15 m/s.  With the corridor
enabled the ego backs off once, then follows from beyond the trigger
distance where the swings never reach it.  With the corridor disabled
the ego hugs the live chance margin and brakes on every downswing.  The
comparison figure stacks both mode timelines.
"""
import pathlib

from lanegate.hmdp import LaneGeometry
from lanegate.mpc import CostWeights, EngineParams, PlannerConfig
from lanegate.report import plot_mode_comparison
from lanegate.sim import SimConfig, VehicleInit, run_episode

OUT = pathlib.Path(__file__).resolve().parent / "out"


def leader_schedule(duration):
    steps = [(0.0, 15.0)]
    t, low = 2.0, True
    while t < duration:
        steps.append((t, 13.0 if low else 17.0))
        low = not low
        t += 3.0
    return tuple(steps)


def switches_in(trace, t_lo, t_hi):
    return sum(
        1
        for d in trace.by_type("decision")
        if t_lo <= d["t"] < t_hi and d["action"][1] != 0
    )


def main():
    OUT.mkdir(exist_ok=True)
    duration = 40.0
    geom = LaneGeometry(1)
    traces = []
    for hyst_on in (True, False):
        vehicles = [
            VehicleInit("ev", 1, 0.0, 15.0, kind="ev"),
            VehicleInit("sv01", 1, 19.0, 15.0, speed_schedule=leader_schedule(duration)),
        ]
        params = EngineParams(
            weights=CostWeights(v_ref=15.0),
            planner=PlannerConfig(hysteresis=hyst_on),
        )
        result = run_episode(
            geom, vehicles, params, SimConfig(duration=duration), seed=11
        )
        label = "hysteresis on" if hyst_on else "hysteresis off"
        total = result.summary.beta_switches
        settled = switches_in(result.trace, 20.0, duration)
        print(f"{label:>14}: {total:3.0f} switches total, {settled:2d} after settling")
        traces.append(result.trace)

    plot_mode_comparison(traces, ["hysteresis on", "hysteresis off"], OUT / "modes.svg")
    print(f"figure in {OUT}/modes.svg")


if __name__ == "__main__":
    main()
