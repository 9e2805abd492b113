"""Gap margins, band geometry, and the frozen-release hysteresis.

Expected values were computed independently (plain formulas plus the scipy
normal quantile) and frozen as literals; the property tests then pin the
invariants the rest of the engine leans on.
"""

import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from lanegate.safety import (
    CorrectiveState,
    HysteresisState,
    IdmParams,
    RiskParams,
    bandwidth,
    gap_sign,
    hard_margin,
    idm_gap,
    signed_gap,
    thresholds,
    update_corrective,
)

IDM = IdmParams()
RISK = RiskParams()

# Phi^-1(0.95), the margin multiplier at the default epsilon = 0.05.
Z95 = 1.6448536269514722

speeds = st.floats(min_value=0.0, max_value=45.0)
gaps = st.lists(st.floats(min_value=-50.0, max_value=300.0), min_size=1, max_size=6)


# ---------------------------------------------------------------- idm_gap

def test_idm_gap_frozen_values():
    # standstill: only the jam distance remains
    assert idm_gap(0.0, 30.0, IDM) == 2.0
    # closing on a slower leader: 2 + 25 + 125 / (2 sqrt(6))
    assert idm_gap(25.0, 20.0, IDM) == pytest.approx(52.51551815399144, abs=1e-12)
    # equal speeds: jam + headway term only
    assert idm_gap(20.0, 20.0, IDM) == 22.0
    # leader pulling away fast enough to zero the dynamic term
    assert idm_gap(16.15, 24.54, IDM) == 2.0


@given(v_ev=speeds, v_sv=speeds)
def test_idm_gap_floor_and_equal_speed_line(v_ev, v_sv):
    g = idm_gap(v_ev, v_sv, IDM)
    assert g >= IDM.jam_distance
    if v_ev == v_sv:
        assert g == pytest.approx(IDM.jam_distance + v_ev * IDM.headway)


@given(v=speeds)
def test_idm_gap_grows_with_closing_speed(v):
    # at fixed follower speed, a slower leader can never shrink the gap
    slower = idm_gap(v, max(v - 5.0, 0.0), IDM)
    faster = idm_gap(v, v + 5.0, IDM)
    assert slower >= idm_gap(v, v, IDM) >= faster


# ------------------------------------------------------------ hard_margin

def test_hard_margin_frozen_values():
    assert hard_margin(20.0, 0.0, RISK) == 20.0
    assert hard_margin(20.0, 1.0, RISK) == pytest.approx(21.644853626951473, abs=1e-12)
    assert hard_margin(2.0, 0.25, RISK) == pytest.approx(2.822426813475736, abs=1e-12)


def test_hard_margin_rejects_negative_variance():
    with pytest.raises(ValueError):
        hard_margin(10.0, -0.1, RISK)


@given(
    d=st.floats(min_value=0.0, max_value=200.0),
    var_lo=st.floats(min_value=0.0, max_value=5.0),
    var_hi=st.floats(min_value=0.0, max_value=5.0),
)
def test_hard_margin_monotone_in_variance(d, var_lo, var_hi):
    lo, hi = sorted((var_lo, var_hi))
    assert hard_margin(d, lo, RISK) <= hard_margin(d, hi, RISK)
    assert hard_margin(d, 0.0, RISK) == d


def test_quantile_cached_on_params():
    assert RISK.z == pytest.approx(Z95, abs=1e-12)
    tighter = RiskParams(epsilon=0.01)
    assert tighter.z > RISK.z


# -------------------------------------------------- bandwidth / thresholds

def test_bandwidth_frozen_values():
    assert bandwidth(20.0, RISK) == 10.0  # proportional region
    assert bandwidth(4.0, RISK) == 6.0  # clamped from below
    assert bandwidth(60.0, RISK) == 22.0  # clamped from above


@given(d=st.floats(min_value=0.0, max_value=500.0))
def test_bandwidth_stays_clamped(d):
    band = bandwidth(d, RISK)
    assert RISK.band_min <= band <= RISK.band_max


def test_thresholds_frozen_values():
    trigger, release = thresholds(21.645, 10.0, RISK)
    assert trigger == pytest.approx(31.645, abs=1e-12)
    assert release == pytest.approx(35.645, abs=1e-12)
    trigger, release = thresholds(10.0, 6.0, RISK)
    assert (trigger, release) == (pytest.approx(16.0), pytest.approx(18.4))


@given(
    d_hc=st.floats(min_value=0.0, max_value=300.0),
    band=st.floats(min_value=6.0, max_value=22.0),
)
def test_threshold_order(d_hc, band):
    trigger, release = thresholds(d_hc, band, RISK)
    assert release > trigger >= d_hc
    assert release - trigger == pytest.approx(
        (RISK.release_scale - RISK.trigger_scale) * band
    )


# --------------------------------------------------------- gap bookkeeping

def test_gap_sign_and_signed_gap():
    assert gap_sign(0.0, 10.0) == 1  # other vehicle ahead
    assert gap_sign(10.0, 0.0) == -1  # other vehicle behind
    assert gap_sign(5.0, 5.0) == 1  # tie counts as ego behind
    assert signed_gap(0.0, 10.0, 1) == 10.0
    assert signed_gap(10.0, 0.0, -1) == 10.0


# --------------------------------------------------------- corrective mode

def test_trigger_freezes_release_and_band():
    entry = update_corrective(
        CorrectiveState(), [33.0, 30.0, 29.0], 31.645, 35.645, idm_ref_now=20.0
    )
    assert entry.active
    assert entry.release_gap == 35.645
    assert entry.band == pytest.approx(4.0, abs=1e-12)
    assert entry.idm_ref == 20.0


def test_no_trigger_when_all_gaps_clear():
    entry = update_corrective(CorrectiveState(), [33.0, 34.0, 35.0], 31.645, 35.645)
    assert not entry.active


def test_active_holds_until_every_gap_clears_frozen_release():
    held = CorrectiveState(active=True, release_gap=35.645, band=4.0, idm_ref=20.0)
    # one predicted gap still below the frozen release: hold, fields untouched
    result = update_corrective(held, [36.0, 34.0, 38.0], 99.0, 99.0)
    assert result == held
    # all gaps clear: release
    released = update_corrective(held, [36.0, 37.0, 38.0], 99.0, 99.0)
    assert not released.active


def test_release_ignores_current_thresholds():
    # the third argument pair is what the thresholds WOULD be now; an active
    # entry must compare against its frozen value only
    held = CorrectiveState(active=True, release_gap=50.0, band=4.0, idm_ref=20.0)
    still = update_corrective(held, [45.0, 46.0], trigger_gap=10.0, release_gap_now=12.0)
    assert still.active and still.release_gap == 50.0


def test_empty_gap_list_is_a_no_op():
    held = CorrectiveState(active=True, release_gap=50.0, band=4.0, idm_ref=20.0)
    assert update_corrective(held, [], 1.0, 2.0) == held
    assert update_corrective(CorrectiveState(), [], 1.0, 2.0) == CorrectiveState()


@given(gaps=gaps, trigger=st.floats(min_value=0.0, max_value=100.0))
def test_trigger_is_existential_release_is_universal(gaps, trigger):
    release_now = trigger + 4.0
    armed = update_corrective(CorrectiveState(), gaps, trigger, release_now, 17.0)
    assert armed.active == any(g < trigger for g in gaps)
    if armed.active:
        assert armed.release_gap == release_now
        cleared = update_corrective(armed, gaps, 0.0, 0.0)
        assert cleared.active == (not all(g >= release_now for g in gaps))


# --------------------------------------------------------- hysteresis store

def test_hysteresis_state_drops_inactive_entries():
    hyst = HysteresisState()
    assert hyst.get("sv01") == CorrectiveState()
    hyst.put("sv02", CorrectiveState(active=True, release_gap=30.0, band=4.0, idm_ref=20.0))
    hyst.put("sv01", CorrectiveState(active=True, release_gap=31.0, band=4.0, idm_ref=20.0))
    assert hyst.active_ids() == ("sv01", "sv02")
    hyst.put("sv02", CorrectiveState())
    assert hyst.active_ids() == ("sv01",)
    assert "sv02" not in hyst.entries


def test_hysteresis_copy_is_independent():
    hyst = HysteresisState()
    hyst.put("sv01", CorrectiveState(active=True, release_gap=30.0, band=4.0, idm_ref=20.0))
    clone = hyst.copy()
    clone.put("sv01", CorrectiveState())
    assert hyst.active_ids() == ("sv01",)
    assert clone.active_ids() == ()


# ------------------------------------------------------ parameter validation

@pytest.mark.parametrize(
    "kwargs",
    [
        {"epsilon": 0.0},
        {"epsilon": 0.5},
        {"epsilon": -0.1},
        {"band_min": 0.0},
        {"band_min": 10.0, "band_max": 5.0},
        {"band_ratio": 0.0},
        {"band_ratio": 1.0},
        {"trigger_scale": 1.4, "release_scale": 1.4},
        {"trigger_scale": 2.0, "release_scale": 1.0},
    ],
)
def test_risk_params_validation(kwargs):
    with pytest.raises(ValueError):
        RiskParams(**kwargs)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"jam_distance": -1.0},
        {"headway": -0.5},
        {"max_accel": 0.0},
        {"comfort_decel": -3.0},
    ],
)
def test_idm_params_validation(kwargs):
    with pytest.raises(ValueError):
        IdmParams(**kwargs)


def test_epsilon_tightens_the_margin():
    loose = RiskParams(epsilon=0.1)
    tight = RiskParams(epsilon=0.01)
    assert hard_margin(20.0, 1.0, tight) > hard_margin(20.0, 1.0, loose)
    # the quantile matches the closed form of the inverse error function
    assert loose.z == pytest.approx(math.sqrt(2.0) * 0.9061938024368232, rel=1e-9)
