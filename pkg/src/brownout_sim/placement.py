"""VM placement and consolidation: power-aware best fit (PCO) and the UBP variant."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .domain import DatacenterState, HostState, Lifecycle, VmState
from .power import vm_utilization

log = logging.getLogger(__name__)

SLEEP = "sleep"
_EPS = 1e-12

# (vm id, contribution to host utilization) pairs -> vm ids chosen for migration
Selector = Callable[[Sequence[tuple[int, float]]], list[int]]


class PlacementError(RuntimeError):
    pass


@dataclass(frozen=True)
class MigrationDecision:
    vm_id: Optional[int]
    source_host: int
    target_host: object  # host id, or SLEEP when the source is switched off


@dataclass
class ConsolidationResult:
    decisions: list[MigrationDecision] = field(default_factory=list)
    turned_on: list[int] = field(default_factory=list)
    turned_off: list[int] = field(default_factory=list)
    unresolved: list[int] = field(default_factory=list)  # hosts left overloaded

    @property
    def migrations(self) -> list[MigrationDecision]:
        return [d for d in self.decisions if d.vm_id is not None]


class _Loads:
    """Running CPU and RAM bookkeeping for hosts while decisions are made."""

    def __init__(self, hosts: Iterable[HostState], vm_util: dict[int, float], vms: dict[int, VmState], weighted: bool):
        self.weighted = weighted
        self.vm_util = vm_util
        self.vms = vms
        self.hosts = {h.id: h for h in hosts}
        self.cpu = {}
        self.ram = {}
        for h in self.hosts.values():
            self.cpu[h.id] = sum(self.contribution(vid, h) for vid in h.vm_ids)
            self.ram[h.id] = sum(vms[vid].spec.ram_mb for vid in h.vm_ids)

    def contribution(self, vm_id: int, host: HostState) -> float:
        u = self.vm_util[vm_id]
        if self.weighted:
            return u * self.vms[vm_id].spec.cpu_mhz / host.spec.cpu_mhz
        return u

    def fits(self, vm_id: int, host: HostState, cap: float) -> bool:
        vm = self.vms[vm_id]
        if self.ram[host.id] + vm.spec.ram_mb > host.spec.ram_mb:
            return False
        return self.cpu[host.id] + self.contribution(vm_id, host) <= cap + _EPS

    def power_delta(self, vm_id: int, host: HostState) -> float:
        p = host.spec.power
        before = self.cpu[host.id]
        after = before + self.contribution(vm_id, host)
        dyn = p.dynamic_watts * (min(after, 1.0) - min(before, 1.0))
        if host.powered:
            return dyn
        return p.idle_watts + p.dynamic_watts * min(after, 1.0)

    def add(self, vm_id: int, host: HostState) -> None:
        self.cpu[host.id] += self.contribution(vm_id, host)
        self.ram[host.id] += self.vms[vm_id].spec.ram_mb

    def remove(self, vm_id: int, host: HostState) -> None:
        self.cpu[host.id] -= self.contribution(vm_id, host)
        self.ram[host.id] -= self.vms[vm_id].spec.ram_mb

    def best_host(self, vm_id: int, candidates: Iterable[HostState], cap: float) -> Optional[HostState]:
        best, best_key = None, None
        for h in candidates:
            if not self.fits(vm_id, h, cap):
                continue
            key = (self.power_delta(vm_id, h), h.id)
            if best_key is None or key < best_key:
                best, best_key = h, key
        return best


def current_utilizations(state: DatacenterState) -> dict[int, float]:
    """Effective utilization of every VM at its current demand and activation."""
    return {vm.id: vm_utilization(vm, vm.demand) for vm in state.vms}


def host_loads(state: DatacenterState, weighted: bool = True) -> dict[int, float]:
    loads = _Loads(state.hosts, current_utilizations(state), {v.id: v for v in state.vms}, weighted)
    return dict(loads.cpu)


def initial_placement(
    vms: Sequence[VmState],
    hosts: Sequence[HostState],
    tp: float = 1.0,
    weighted: bool = True,
) -> dict[int, int]:
    """Power-aware best fit decreasing over empty hosts.

    VMs are taken in decreasing order of CPU demand; each goes to the
    feasible powered host with the smallest power increase, and a powered-off
    host is switched on only when no powered host fits. Returns vm id -> host id.
    """
    util = {vm.id: vm.demand for vm in vms}
    by_id = {vm.id: vm for vm in vms}
    blank = [HostState(h.id, h.spec, h.lifecycle, h.remaining_s, []) for h in hosts]
    loads = _Loads(blank, util, by_id, weighted)

    def demand(vm: VmState) -> float:
        return vm.demand * vm.spec.cpu_mhz if weighted else vm.demand

    assignment: dict[int, int] = {}
    for vm in sorted(vms, key=lambda v: (-demand(v), v.id)):
        target = loads.best_host(vm.id, (h for h in blank if h.powered), tp)
        if target is None:
            target = loads.best_host(vm.id, (h for h in blank if h.lifecycle is Lifecycle.OFF), tp)
            if target is not None:
                target.lifecycle = Lifecycle.ON
        if target is None:
            raise PlacementError(f"VM {vm.id} ({vm.spec.name}) fits on no host")
        loads.add(vm.id, target)
        assignment[vm.id] = target.id
    return assignment


def detect_overloaded(
    state: DatacenterState,
    tp: float,
    weighted: bool = True,
    loads: Optional[dict[int, float]] = None,
) -> set[int]:
    """Ids of powered hosts whose utilization strictly exceeds ``tp``."""
    if not 0 < tp <= 1:
        raise ValueError(f"threshold must be in (0, 1], got {tp}")
    if loads is None:
        loads = host_loads(state, weighted)
    return {h.id for h in state.hosts if h.powered and loads[h.id] > tp}


def select_vms_pco(vm_loads: Sequence[tuple[int, float]], tp: float) -> list[int]:
    """Minimal-migration selection on an overloaded host.

    Repeatedly takes the smallest VM whose removal brings the host to or
    below ``tp``; if no single VM suffices, the largest one.
    """
    remaining = sorted(vm_loads, key=lambda x: x[0])
    load = sum(x for _, x in remaining)
    chosen: list[int] = []
    while load > tp and remaining:
        sufficient = [p for p in remaining if load - p[1] <= tp]
        if sufficient:
            pick = min(sufficient, key=lambda p: (p[1], p[0]))
        else:
            pick = min(remaining, key=lambda p: (-p[1], p[0]))
        remaining.remove(pick)
        chosen.append(pick[0])
        load -= pick[1]
    return chosen


def ubp_migration_probability(u: float, t_h: float, alpha: float, corrected: bool = False) -> float:
    """Migration probability of a VM on a host at utilization ``u``.

    The literal form ``(1 - (u - 1) / (1 - t_h)) ** alpha`` is at least 1 for
    every ``u <= 1`` and is clamped to [0, 1]. ``corrected`` uses
    ``((u - t_h) / (1 - t_h)) ** alpha`` above the threshold and 0 below it.
    """
    if not 0 <= u <= 1:
        raise ValueError(f"utilization must be in [0, 1], got {u}")
    if alpha <= 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    if t_h == 1:
        raise ZeroDivisionError("upper threshold of 1 leaves no overload band")
    if corrected:
        if u <= t_h:
            return 0.0
        raw = ((u - t_h) / (1 - t_h)) ** alpha
    else:
        base = 1 - (u - 1) / (1 - t_h)
        if base >= 1:
            return 1.0
        raw = base**alpha if base > 0 else 0.0
    return min(max(raw, 0.0), 1.0)


def select_vms_ubp(
    vm_loads: Sequence[tuple[int, float]],
    t_h: float,
    alpha: float,
    rng: np.random.Generator,
    corrected: bool = False,
) -> list[int]:
    """Probabilistic selection: each VM (by id) leaves with probability f_m(host utilization)."""
    load = sum(x for _, x in vm_loads)
    chosen: list[int] = []
    for vm_id, x in sorted(vm_loads):
        if load <= t_h:
            break
        p = ubp_migration_probability(min(load, 1.0), t_h, alpha, corrected)
        if rng.random() < p:
            chosen.append(vm_id)
            load -= x
    return chosen


def consolidate(
    state: DatacenterState,
    tp: float,
    select: Optional[Selector] = None,
    weighted: bool = True,
    transition_s: float = 30.0,
) -> ConsolidationResult:
    """Relieve overloaded hosts, then switch off hosts that can be fully evacuated.

    Decisions are applied to ``state`` as they are made. Hosts that are
    switched on or off are left in their transition state; the engine
    completes the transition at the end of the interval.
    """
    if select is None:
        select = lambda pairs: select_vms_pco(pairs, tp)  # noqa: E731
    vms = {v.id: v for v in state.vms}
    loads = _Loads(state.hosts, current_utilizations(state), vms, weighted)
    result = ConsolidationResult()
    received: set[int] = set()

    def move(vm_id: int, src: HostState, dst: HostState) -> None:
        loads.remove(vm_id, src)
        loads.add(vm_id, dst)
        src.vm_ids.remove(vm_id)
        dst.vm_ids.append(vm_id)
        vms[vm_id].host_id = dst.id
        received.add(dst.id)
        result.decisions.append(MigrationDecision(vm_id, src.id, dst.id))

    overloaded = sorted(h.id for h in state.hosts if h.powered and loads.cpu[h.id] > tp)
    for hid in overloaded:
        src = state.host(hid)
        pairs = [(vid, loads.contribution(vid, src)) for vid in sorted(src.vm_ids)]
        for vm_id in select(pairs):
            targets = (h for h in state.hosts if h.powered and h.id != hid and loads.cpu[h.id] <= tp)
            dst = loads.best_host(vm_id, targets, tp)
            if dst is None:
                dst = loads.best_host(vm_id, (h for h in state.hosts if h.lifecycle is Lifecycle.OFF), tp)
                if dst is not None:
                    dst.lifecycle = Lifecycle.TURNING_ON
                    dst.remaining_s = transition_s
                    result.turned_on.append(dst.id)
            if dst is None:
                log.debug("VM %d on host %d has no migration target", vm_id, hid)
                continue
            move(vm_id, src, dst)
        if loads.cpu[hid] > tp:
            result.unresolved.append(hid)

    skip = set(overloaded) | received
    candidates = sorted(
        (h for h in state.hosts if h.lifecycle is Lifecycle.ON and h.id not in skip and loads.cpu[h.id] <= tp),
        key=lambda h: (loads.cpu[h.id], h.id),
    )
    for src in candidates:
        if src.id in received or not src.powered:
            continue
        plan = _evacuation_plan(src, state, loads, tp)
        if plan is None:
            continue
        for vm_id, dst in plan:
            move(vm_id, src, dst)
        src.lifecycle = Lifecycle.TURNING_OFF
        src.remaining_s = transition_s
        result.turned_off.append(src.id)
        result.decisions.append(MigrationDecision(None, src.id, SLEEP))
    return result


def _evacuation_plan(src: HostState, state: DatacenterState, loads: _Loads, tp: float):
    """Targets for every VM on ``src``, or None when some VM fits nowhere."""
    order = sorted(src.vm_ids, key=lambda v: (-loads.contribution(v, src), v))
    targets = [h for h in state.hosts if h.lifecycle in (Lifecycle.ON, Lifecycle.TURNING_ON) and h.id != src.id]
    plan = []
    for vm_id in order:
        dst = loads.best_host(vm_id, (h for h in targets if loads.cpu[h.id] <= tp), tp)
        if dst is None:
            break
        loads.add(vm_id, dst)
        plan.append((vm_id, dst))
    for vm_id, dst in plan:
        loads.remove(vm_id, dst)
    if len(plan) < len(order):
        return None
    return plan
