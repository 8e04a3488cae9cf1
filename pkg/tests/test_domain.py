import pytest

from brownout_sim.domain import (
    HOST_TYPES,
    VM_TYPES,
    ComponentProfile,
    Lifecycle,
    Policy,
    SimConfig,
    SystemState,
    validate,
)

from builders import datacenter, host, vm


def consistent():
    return datacenter([host(0), host(1)], [vm(0, host_id=0), vm(1, host_id=1)])


def test_consistent_state_has_no_violations():
    assert validate(consistent()) == []


def test_off_host_with_vm_flagged():
    state = consistent()
    state.hosts[0].lifecycle = Lifecycle.OFF
    problems = validate(state)
    assert len(problems) == 1
    assert "Off host hosts VM" in problems[0]


def test_over_capacity_vm_flagged():
    comps = [ComponentProfile(0, True, 0.6, 0.0), ComponentProfile(1, False, 0.6, 0.1)]
    state = datacenter([host(0)], [vm(0, host_id=0, comps=comps)])
    problems = validate(state)
    assert len(problems) == 1
    assert "utilization exceeds capacity" in problems[0]


def test_inactive_mandatory_flagged():
    state = consistent()
    state.vms[0].components[0].active = False
    assert any("mandatory component inactive" in p for p in validate(state))


def test_broken_cross_reference_flagged():
    state = consistent()
    state.vms[0].host_id = 1
    problems = validate(state)
    assert any("host 0" in p for p in problems)
    assert any("vm 0" in p for p in problems)


def test_transition_needs_remaining_time():
    state = consistent()
    state.hosts[1].lifecycle = Lifecycle.TURNING_OFF
    assert any("remaining time" in p for p in validate(state))


def test_builtin_types():
    assert [h.cpu_mhz for h in HOST_TYPES] == [3720.0, 5320.0]
    assert [(v.cpu_mhz, v.ram_mb) for v in VM_TYPES] == [(2500, 870), (2000, 1740), (1000, 1740), (500, 613)]
    assert all(h.ram_mb == 4096 for h in HOST_TYPES)


def test_config_defaults():
    cfg = SimConfig()
    assert (cfg.interval_s, cfg.overload_threshold, cfg.lam, cfg.window_size, cfg.host_transition_s) == (300, 0.8, 100, 12, 30)
    assert cfg.intervals_per_day == 288


@pytest.mark.parametrize(
    "kwargs",
    [{"overload_threshold": 0}, {"overload_threshold": 1.01}, {"window_size": 0}, {"interval_s": 0}, {"lam": -1}],
)
def test_config_rejects_invalid(kwargs):
    with pytest.raises(ValueError):
        SimConfig(**kwargs)


def test_config_accepts_policy_names():
    assert SimConfig(policy="BMDP").policy is Policy.BMDP


def test_paper_faithful_toggles_both_switches():
    cfg = SimConfig().paper_faithful()
    assert not cfg.ubp_corrected and not cfg.weighted_utilization


def test_system_state_capture():
    state = consistent()
    state.vms[0].components.append(ComponentProfile(1, False, 0.0, 0.2, active=False))
    snap = SystemState.capture(state, 1.5, 0.2)
    assert snap.energy_kwh == 1.5 and snap.discount_amount == 0.2
    assert snap.activation_vector == (True, False, True)
