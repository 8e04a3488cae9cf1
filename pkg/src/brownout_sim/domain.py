"""Core value types: hosts, VMs, application components, run configuration."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional


class Policy(str, enum.Enum):
    PCO = "PCO"
    UBP = "UBP"
    HUPRFCS = "HUPRFCS"
    BMDP = "BMDP"


class Lifecycle(str, enum.Enum):
    ON = "on"
    OFF = "off"
    TURNING_ON = "turning_on"
    TURNING_OFF = "turning_off"


@dataclass(frozen=True)
class PowerProfile:
    """Linear server power model: idle floor plus a dynamic span at 100% CPU."""

    idle_watts: float
    dynamic_watts: float

    @property
    def peak_watts(self) -> float:
        return self.idle_watts + self.dynamic_watts


@dataclass(frozen=True)
class HostSpec:
    name: str
    cpu_mhz_per_core: float
    cores: int
    ram_mb: float
    bw_mbps: float
    storage_gb: float
    power: PowerProfile

    @property
    def cpu_mhz(self) -> float:
        return self.cpu_mhz_per_core * self.cores


@dataclass(frozen=True)
class VmSpec:
    name: str
    cpu_mhz: float
    ram_mb: float
    bw_mbps: float
    storage_gb: float


# Wattages follow the published SPECpower_ssj2008 results for the IBM x3550 M3
# (Xeon X5670 / X5675) reduced to a linear idle + dynamic fit.
X5670_POWER = PowerProfile(idle_watts=66.0, dynamic_watts=181.0)
X5675_POWER = PowerProfile(idle_watts=58.4, dynamic_watts=163.6)

HOST_TYPES = (
    HostSpec("host-1", 1860.0, 2, 4096.0, 1000.0, 100.0, X5670_POWER),
    HostSpec("host-2", 2660.0, 2, 4096.0, 1000.0, 100.0, X5675_POWER),
)

VM_TYPES = (
    VmSpec("vm-1", 2500.0, 870.0, 100.0, 1.0),
    VmSpec("vm-2", 2000.0, 1740.0, 100.0, 1.0),
    VmSpec("vm-3", 1000.0, 1740.0, 100.0, 1.0),
    VmSpec("vm-4", 500.0, 613.0, 100.0, 1.0),
)


@dataclass
class ComponentProfile:
    """One application component.

    ``utilization`` is the component's share of its VM's CPU demand and
    ``discount`` the fraction of the application price refunded while it is
    switched off.
    """

    id: int
    mandatory: bool
    utilization: float
    discount: float
    active: bool = True

    @property
    def ratio(self) -> float:
        """Utilization-to-discount ratio; infinite for free components."""
        if self.discount > 0:
            return self.utilization / self.discount
        return math.inf if self.utilization > 0 else 0.0


@dataclass
class VmState:
    id: int
    spec: VmSpec
    host_id: Optional[int] = None
    components: list[ComponentProfile] = field(default_factory=list)
    trace_id: int = 0
    demand: float = 0.0  # traced VM-level utilization for the current interval

    @property
    def optional_components(self) -> list[ComponentProfile]:
        return [c for c in self.components if not c.mandatory]

    @property
    def fully_optional(self) -> bool:
        """True when no mandatory component carries any load."""
        return not any(c.mandatory and c.utilization > 0 for c in self.components)


@dataclass
class HostState:
    id: int
    spec: HostSpec
    lifecycle: Lifecycle = Lifecycle.OFF
    remaining_s: float = 0.0
    vm_ids: list[int] = field(default_factory=list)

    @property
    def powered(self) -> bool:
        """On or turning on: the host can run (and receive) VMs."""
        return self.lifecycle in (Lifecycle.ON, Lifecycle.TURNING_ON)


@dataclass
class DatacenterState:
    hosts: list[HostState]
    vms: list[VmState]
    clock: int = 0

    def __post_init__(self) -> None:
        self._vm_index = {vm.id: vm for vm in self.vms}
        self._host_index = {h.id: h for h in self.hosts}

    def vm(self, vm_id: int) -> VmState:
        return self._vm_index[vm_id]

    def host(self, host_id: int) -> HostState:
        return self._host_index[host_id]

    def host_vms(self, host: HostState) -> list[VmState]:
        return [self._vm_index[i] for i in host.vm_ids]


@dataclass(frozen=True)
class SystemState:
    """Energy/discount pair of an interval together with the activation vector."""

    energy_kwh: float
    discount_amount: float
    activation_vector: tuple[bool, ...]

    @classmethod
    def capture(cls, state: DatacenterState, energy_kwh: float, discount_amount: float) -> "SystemState":
        flags = tuple(c.active for vm in sorted(state.vms, key=lambda v: v.id) for c in vm.components)
        return cls(energy_kwh, discount_amount, flags)


@dataclass(frozen=True)
class SimConfig:
    interval_s: float = 300.0
    horizon_intervals: int = 288
    overload_threshold: float = 0.8
    lam: float = 100.0
    window_size: int = 12
    host_transition_s: float = 30.0
    policy: Policy = Policy.PCO
    ubp_alpha: float = 0.25
    seed: int = 0
    # False uses the literal f_m(u), which saturates at 1.
    ubp_corrected: bool = True
    # False sums raw VM utilizations into host power (no vm/host cpu weight).
    # Placement and overload checks always weight by VM size.
    weighted_utilization: bool = True
    mdp_lookahead: int = 1
    mdp_tol: float = 1e-6
    mdp_max_iters: int = 100
    # Largest per-host product of key states searched jointly; larger hosts
    # fall back to per-VM coordinate passes.
    mdp_joint_limit: int = 4096
    # Multiplier turning summed component discounts into D(t). None means
    # 1 / (intervals per day * number of VMs): each application pays one
    # price unit per day, so D(t) is lost revenue as a share of daily revenue.
    discount_scale: Optional[float] = None
    n_categories: Optional[int] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "policy", Policy(self.policy))
        if not 0 < self.overload_threshold <= 1:
            raise ValueError(f"overload_threshold must be in (0, 1], got {self.overload_threshold}")
        if self.window_size < 1:
            raise ValueError(f"window_size must be >= 1, got {self.window_size}")
        if self.interval_s <= 0:
            raise ValueError(f"interval_s must be > 0, got {self.interval_s}")
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.horizon_intervals < 0:
            raise ValueError(f"horizon_intervals must be >= 0, got {self.horizon_intervals}")
        if not 0 <= self.host_transition_s < self.interval_s:
            raise ValueError("host_transition_s must be shorter than one interval")
        if self.mdp_lookahead < 1:
            raise ValueError("mdp_lookahead must be >= 1")

    def with_(self, **changes) -> "SimConfig":
        return replace(self, **changes)

    def paper_faithful(self) -> "SimConfig":
        """Literal UBP probability and unweighted utilization sums in host power."""
        return replace(self, ubp_corrected=False, weighted_utilization=False)

    @property
    def intervals_per_day(self) -> float:
        return 86400.0 / self.interval_s


_EPS = 1e-9


def validate(state: DatacenterState) -> list[str]:
    """Return a description of every broken invariant; empty when consistent."""
    problems: list[str] = []
    hosts = {h.id: h for h in state.hosts}
    vms = {v.id: v for v in state.vms}
    if state.clock < 0:
        problems.append(f"clock is negative ({state.clock})")

    for h in state.hosts:
        s = h.spec
        if min(s.cpu_mhz_per_core, s.cores, s.ram_mb, s.bw_mbps, s.storage_gb) <= 0:
            problems.append(f"host {h.id}: non-positive capacity")
        if s.power.idle_watts < 0 or s.power.dynamic_watts < 0:
            problems.append(f"host {h.id}: negative power profile")
        if h.lifecycle is Lifecycle.OFF and h.vm_ids:
            problems.append(f"host {h.id}: Off host hosts VM {h.vm_ids[0]}")
        if h.lifecycle in (Lifecycle.TURNING_ON, Lifecycle.TURNING_OFF) and h.remaining_s <= 0:
            problems.append(f"host {h.id}: transition with no remaining time")
        if len(set(h.vm_ids)) != len(h.vm_ids):
            problems.append(f"host {h.id}: duplicate VM ids")
        for vm_id in h.vm_ids:
            vm = vms.get(vm_id)
            if vm is None:
                problems.append(f"host {h.id}: unknown VM {vm_id}")
            elif vm.host_id != h.id:
                problems.append(f"host {h.id}: VM {vm_id} points at host {vm.host_id}")

    for vm in state.vms:
        s = vm.spec
        if min(s.cpu_mhz, s.ram_mb, s.bw_mbps, s.storage_gb) <= 0:
            problems.append(f"vm {vm.id}: non-positive capacity")
        if vm.host_id is not None:
            host = hosts.get(vm.host_id)
            if host is None:
                problems.append(f"vm {vm.id}: unknown host {vm.host_id}")
            elif vm.id not in host.vm_ids:
                problems.append(f"vm {vm.id}: host {vm.host_id} does not list it")
        active_u = 0.0
        for c in vm.components:
            if not 0 <= c.utilization <= 1:
                problems.append(f"vm {vm.id} component {c.id}: utilization out of [0, 1]")
            if not 0 <= c.discount <= 1:
                problems.append(f"vm {vm.id} component {c.id}: discount out of [0, 1]")
            if c.mandatory and not c.active:
                problems.append(f"vm {vm.id} component {c.id}: mandatory component inactive")
            if c.mandatory and c.discount != 0:
                problems.append(f"vm {vm.id} component {c.id}: mandatory component has a discount")
            if c.active:
                active_u += c.utilization
        if active_u > 1 + _EPS:
            problems.append(f"vm {vm.id}: utilization exceeds capacity ({active_u:.3f})")
    return problems
