"""Walk through one corrective-mode episode on a two-vehicle road.

The ego approaches a steady leader 2 m/s slower, starting from well
outside the trigger distance.  With speed tracking turned off there is
nothing pulling the ego back up to its reference after the encounter, so
the timeline below shows the canonical shape of a single episode: the
live gap crossing the trigger, the entry freezing its release threshold,
a short braking phase reopening the gap, and the release ending the
episode for good.
"""
from lanegate.hmdp import LaneGeometry
from lanegate.mpc import CostWeights, EngineParams
from lanegate.safety import bandwidth, hard_margin, idm_gap, thresholds
from lanegate.sim import SimConfig, VehicleInit, run_episode


def main():
    params = EngineParams(weights=CostWeights(v_ref=20.0, w_speed=0.0))
    one_step_var = params.prediction.var0 + params.prediction.step_var
    d_follow = idm_gap(20.0, 20.0, params.idm)
    trigger, release = thresholds(
        hard_margin(d_follow, one_step_var, params.risk),
        bandwidth(d_follow, params.risk),
        params.risk,
    )
    print(f"steady corridor at 20 m/s: trigger {trigger:.2f} m, release {release:.2f} m")

    geom = LaneGeometry(1)
    vehicles = [
        VehicleInit("ev", 1, 0.0, 20.0, kind="ev"),
        VehicleInit("sv01", 1, 1.5 * trigger, 18.0, speed_schedule=((0.0, 18.0),)),
    ]
    result = run_episode(geom, vehicles, params, SimConfig(duration=40.0), seed=3)

    states = {s["t"]: s for s in result.trace.by_type("state")}
    armed = False
    print(f"{'t [s]':>6} {'gap [m]':>8} {'ev v':>6} {'action':>8} {'layer':>8}  corrective")
    for d in result.trace.by_type("decision"):
        now_armed = bool(d["corrective"])
        edge = now_armed != armed
        armed = now_armed
        if not (edge or d["t"] % 4.0 < 0.2):
            continue
        s = states[d["t"]]
        ev = next(v for v in s["vehicles"] if v["id"] == "ev")
        sv = next(v for v in s["vehicles"] if v["id"] == "sv01")
        mark = " <-- edge" if edge else ""
        print(
            f"{d['t']:6.1f} {sv['x'] - ev['x']:8.2f} {ev['v']:6.2f} "
            f"{str(tuple(d['action'])):>8} {d['layer']:>8}  {d['corrective']}{mark}"
        )

    summary = result.summary
    print(
        f"\n{summary.decisions} decisions, layers {summary.layer_counts}, "
        f"{summary.beta_switches} mode switches, collision: {summary.collided_ev}"
    )


if __name__ == "__main__":
    main()
