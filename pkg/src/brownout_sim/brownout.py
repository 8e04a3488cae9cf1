"""Brownout controller: dimmer, key-state MDP (BMDP) and the HUPRFCS heuristic."""

from __future__ import annotations

import functools
import math
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Optional, Sequence

import numpy as np

from .domain import ComponentProfile, DatacenterState, HostState, SimConfig, VmState
from .placement import host_loads
from .power import JOULES_PER_KWH, resolve_discount_scale, vm_weight

_TIE = 1e-12


class OverloadWindow:
    """Sliding window over the number of overloaded hosts per interval."""

    def __init__(self, size: int, counts: Iterable[int] = ()):
        if size < 1:
            raise ValueError("window size must be >= 1")
        self.size = size
        self._counts: deque[int] = deque(counts, maxlen=size)

    def push(self, n_overloaded: int) -> None:
        self._counts.append(int(n_overloaded))

    def __len__(self) -> int:
        return len(self._counts)

    def __iter__(self):
        return iter(self._counts)


def estimate_overloaded(window: OverloadWindow, current: int = 0) -> float:
    """Mean overloaded-host count over the window; ``current`` on a cold start."""
    if len(window) == 0:
        return float(current)
    return sum(window) / len(window)


def dimmer(m_hat: float, n_hosts: int) -> float:
    if n_hosts <= 0:
        raise ValueError("datacenter has no hosts")
    if not 0 <= m_hat <= n_hosts:
        raise ValueError(f"estimated overloaded hosts {m_hat} outside [0, {n_hosts}]")
    return math.sqrt(m_hat / n_hosts)


@dataclass(frozen=True)
class RatioCategory:
    index: int
    lo: float
    hi: float
    members: tuple[int, ...]
    mass: float  # share of the VM's optional components in this bin


@dataclass(frozen=True)
class KeyState:
    vm_id: int
    depth: int  # number of highest-ratio categories switched off
    deactivated: frozenset[int]


@dataclass
class DeactivationPlan:
    deactivate: dict[int, frozenset[int]] = field(default_factory=dict)

    def __bool__(self) -> bool:
        return any(self.deactivate.values())

    def components(self) -> int:
        return sum(len(s) for s in self.deactivate.values())


@dataclass
class ValueTable:
    values: dict[Hashable, float]
    iterations: int
    converged: bool

    def __getitem__(self, key: Hashable) -> float:
        return self.values[key]


def categorize(vm: VmState, n_categories: Optional[int] = None) -> list[RatioCategory]:
    """Bin the VM's optional components by utilization/discount ratio.

    ``n_categories`` uniform bins span [min ratio, max ratio]; empty bins are
    dropped. Components with an infinite ratio land in the top bin.
    """
    optional = vm.optional_components
    if not optional:
        return []
    c = n_categories or len(vm.components)
    finite = [x.ratio for x in optional if math.isfinite(x.ratio)]
    if not finite:
        return [RatioCategory(0, math.inf, math.inf, tuple(x.id for x in optional), 1.0)]
    lo, hi = min(finite), max(finite)
    width = (hi - lo) / c
    bins: dict[int, list[int]] = {}
    for x in optional:
        if not math.isfinite(x.ratio):
            idx = c - 1
        elif width == 0:
            idx = 0
        else:
            idx = min(int((x.ratio - lo) / width), c - 1)
        bins.setdefault(idx, []).append(x.id)
    n = len(optional)
    return [
        RatioCategory(i, lo + i * width, hi if i == c - 1 else lo + (i + 1) * width, tuple(bins[i]), len(bins[i]) / n)
        for i in sorted(bins)
    ]


def transition_probability(theta: float, category_mass: float) -> float:
    if not 0 <= theta <= 1:
        raise ValueError(f"dimmer value must be in [0, 1], got {theta}")
    if not 0 <= category_mass <= 1:
        raise ValueError(f"category mass must be in [0, 1], got {category_mass}")
    return theta * category_mass


def enumerate_key_states(vm: VmState, categories: Optional[Sequence[RatioCategory]] = None) -> list[KeyState]:
    """All-active state plus one state per prefix of categories, highest ratio first."""
    if categories is None:
        categories = categorize(vm)
    top_first = sorted(categories, key=lambda cat: -cat.index)
    states = [KeyState(vm.id, 0, frozenset())]
    switched: set[int] = set()
    n_optional = len(vm.optional_components)
    for depth, cat in enumerate(top_first, 1):
        switched |= set(cat.members)
        if vm.fully_optional and len(switched) == n_optional:
            break
        states.append(KeyState(vm.id, depth, frozenset(switched)))
    return states


def key_state_transitions(states: Sequence[KeyState], categories: Sequence[RatioCategory], theta: float) -> np.ndarray:
    """Transition tensor ``P[action, from, to]`` over one VM's key states.

    Action ``a`` aims at state ``a``; it succeeds with the dimmer-weighted mass
    of the categories that have to change and otherwise leaves the VM put.
    """
    members = sorted({m for cat in categories for m in cat.members})
    n = len(states)
    if not members:
        return np.broadcast_to(np.eye(n), (n, n, n)).copy()
    flags = np.array([[m in s.deactivated for m in members] for s in states], dtype=bool)
    changed = (flags[:, None, :] ^ flags[None, :, :]).sum(axis=2) / len(members)
    p = np.array([[transition_probability(theta, x) for x in row] for row in changed])
    P = np.zeros((n, n, n))
    rows = np.arange(n)
    # P[a, i, a] = p[a, i]; the remainder keeps the VM in state i
    P[rows[:, None], rows[None, :], rows[:, None]] += p
    P[rows[:, None], rows[None, :], rows[None, :]] += 1.0 - p
    return P


def value_iteration(
    states: Sequence[Hashable],
    probabilities: np.ndarray,
    instant_costs: Sequence[float],
    tol: float = 1e-6,
    max_iters: int = 100,
    lookahead: Optional[int] = None,
) -> ValueTable:
    """Finite-horizon Bellman backups ``V <- g + min_a P[a] @ V`` from ``V = 0``.

    With ``lookahead`` the table after that many backups is returned; without
    it backups continue until the largest change drops below ``tol``.
    """
    P = np.asarray(probabilities, dtype=float)
    g = np.asarray(instant_costs, dtype=float)
    n = len(states)
    if P.shape != (P.shape[0], n, n) or g.shape != (n,):
        raise ValueError(f"shape mismatch: P {P.shape}, costs {g.shape}, {n} states")
    if P.size and np.abs(P.sum(axis=2) - 1.0).max() > 1e-9:
        raise ValueError("transition rows must sum to 1")
    if np.any(P < 0):
        raise ValueError("negative transition probability")
    horizon = max_iters if lookahead is None else min(lookahead, max_iters)
    V = np.zeros(n)
    converged = False
    it = 0
    for it in range(1, horizon + 1):
        new = g + (P @ V).min(axis=0)
        delta = np.max(np.abs(new - V)) if n else 0.0
        V = new
        if delta < tol:
            converged = True
            break
    if lookahead is not None and it == lookahead:
        converged = True
    if not converged:
        warnings.warn(f"value iteration stopped after {it} sweeps without converging", RuntimeWarning, stacklevel=2)
    return ValueTable({s: float(v) for s, v in zip(states, V)}, it, converged)


@dataclass
class _VmOptions:
    vm: VmState
    states: list[KeyState]
    reduction: np.ndarray  # host utilization removed by each key state
    discount: np.ndarray  # scaled D(t) of each key state
    value: np.ndarray  # MDP value of each key state


@functools.lru_cache(maxsize=8192)
def _structure(profile: tuple, n_categories: int):
    """Categories, key states and per-state (utilization share, discount) sums for one component set."""
    vm = VmState(-1, None, components=[ComponentProfile(i, m, u, d) for i, m, u, d in profile])
    cats = categorize(vm, n_categories)
    states = enumerate_key_states(vm, cats)
    by_id = {c.id: c for c in vm.components}
    share = np.array([sum(by_id[i].utilization for i in s.deactivated) for s in states])
    disc = np.array([math.fsum(by_id[i].discount for i in s.deactivated) for s in states])
    return cats, states, share, disc


def _vm_options(vm, host, cfg, theta, scale, n_categories, host_load, energy_of) -> _VmOptions:
    profile = tuple((c.id, c.mandatory, c.utilization, c.discount) for c in vm.components)
    cats, generic, share, disc = _structure(profile, n_categories)
    states = [KeyState(vm.id, s.depth, s.deactivated) for s in generic]
    total = sum(c.utilization for c in vm.components)
    w = vm_weight(vm, host, cfg.weighted_utilization)
    red = vm.demand * share / total * w if total > 0 else np.zeros(len(states))
    disc = scale * disc
    costs = energy_of(host_load - red) + cfg.lam * disc
    P = key_state_transitions(states, cats, theta)
    table = value_iteration(states, P, costs, cfg.mdp_tol, cfg.mdp_max_iters, cfg.mdp_lookahead)
    return _VmOptions(vm, states, red, disc, np.array([table[s] for s in states]))


def _pick(g: np.ndarray, d: np.ndarray, v: np.ndarray) -> int:
    """Index of the minimal cost; near-ties go to lower discount, then lower value."""
    best = g.min()
    tied = np.flatnonzero(g <= best + _TIE * max(1.0, abs(best)))
    return int(min(tied, key=lambda i: (d[i], v[i], i)))


def bmdp_select(state: DatacenterState, cfg: SimConfig, window: OverloadWindow) -> DeactivationPlan:
    """Choose deactivations on overloaded hosts by minimizing E'(t) + lam * D'(t).

    Each VM's key states are valued by a finite-horizon MDP whose transition
    probabilities scale with the dimmer. Host power couples the VMs sharing a
    host, so their key states are searched jointly when the product is small
    and by per-VM coordinate passes otherwise.
    """
    plan = DeactivationPlan()
    n_hosts = len(state.hosts)
    theta = dimmer(estimate_overloaded(window), n_hosts) if n_hosts else 0.0
    if theta == 0:
        return plan
    capacity = host_loads(state)
    overloaded = [h for h in state.hosts if h.powered and capacity[h.id] > cfg.overload_threshold]
    if not overloaded:
        return plan
    loads = host_loads(state, cfg.weighted_utilization)  # the sums entering host power
    scale = resolve_discount_scale(cfg, len(state.vms))
    n_categories = cfg.n_categories or max(len(vm.components) for vm in state.vms)
    for host in overloaded:
        p = host.spec.power

        def energy_of(load, p=p):
            return (p.idle_watts + np.minimum(load, 1.0) * p.dynamic_watts) * cfg.interval_s / JOULES_PER_KWH

        options = [
            _vm_options(vm, host, cfg, theta, scale, n_categories, loads[host.id], energy_of)
            for vm in sorted(state.host_vms(host), key=lambda v: v.id)
            if vm.optional_components
        ]
        if not options:
            continue
        choice = _search_host(options, loads[host.id], energy_of, cfg)
        for opt, k in zip(options, choice):
            if opt.states[k].deactivated:
                plan.deactivate[opt.vm.id] = opt.states[k].deactivated
    return plan


def _search_host(options: list[_VmOptions], load: float, energy_of, cfg: SimConfig) -> list[int]:
    sizes = [len(o.states) for o in options]
    if math.prod(sizes) <= cfg.mdp_joint_limit:
        grids = np.meshgrid(*[np.arange(s) for s in sizes], indexing="ij")
        idx = [gr.ravel() for gr in grids]
        red = sum(o.reduction[i] for o, i in zip(options, idx))
        disc = sum(o.discount[i] for o, i in zip(options, idx))
        val = sum(o.value[i] for o, i in zip(options, idx))
        g = energy_of(load - red) + cfg.lam * disc
        best = _pick(g, disc, val)
        return [int(i[best]) for i in idx]
    choice = [0] * len(options)
    for _ in range(10):
        changed = False
        for n, o in enumerate(options):
            others_red = sum(options[m].reduction[choice[m]] for m in range(len(options)) if m != n)
            others_disc = sum(options[m].discount[choice[m]] for m in range(len(options)) if m != n)
            g = energy_of(load - others_red - o.reduction) + cfg.lam * (others_disc + o.discount)
            k = _pick(g, o.discount, o.value)
            if k != choice[n]:
                choice[n] = k
                changed = True
        if not changed:
            break
    return choice


def huprfcs_select(state: DatacenterState, cfg: SimConfig, window: OverloadWindow) -> DeactivationPlan:
    """Deactivate components in decreasing utilization/discount order.

    Each overloaded host sheds at least its overshoot above the threshold
    and at least the dimmer's share of its utilization.
    """
    plan = DeactivationPlan()
    n_hosts = len(state.hosts)
    theta = dimmer(estimate_overloaded(window), n_hosts) if n_hosts else 0.0
    if theta == 0:
        return plan
    loads = host_loads(state)
    for host in state.hosts:
        u = loads[host.id]
        if not host.powered or u <= cfg.overload_threshold:
            continue
        target = huprfcs_target(theta, u, cfg.overload_threshold)
        chosen = _greedy_by_ratio(state.host_vms(host), host, target)
        for vm_id, comps in chosen.items():
            plan.deactivate[vm_id] = frozenset(comps)
    return plan


def huprfcs_target(theta: float, host_u: float, tp: float) -> float:
    return max(theta * host_u, host_u - tp, 0.0)


def _greedy_by_ratio(vms: Sequence[VmState], host: HostState, target: float) -> dict[int, list[int]]:
    if target <= 0:
        return {}
    pool = []
    for vm in vms:
        total = sum(c.utilization for c in vm.components)
        w = vm_weight(vm, host)
        for c in vm.optional_components:
            if c.active:
                cut = vm.demand * c.utilization / total * w if total > 0 else 0.0
                pool.append((-c.ratio, vm.id, c.id, cut, vm))
    pool.sort(key=lambda x: x[:3])
    chosen: dict[int, list[int]] = {}
    shed = 0.0
    for _, vm_id, comp_id, cut, vm in pool:
        if shed >= target:
            break
        picked = chosen.setdefault(vm_id, [])
        if vm.fully_optional and len(picked) + 1 >= sum(1 for c in vm.optional_components if c.active):
            continue
        picked.append(comp_id)
        shed += cut
    return {k: v for k, v in chosen.items() if v}


def apply_plan(state: DatacenterState, plan: DeactivationPlan) -> DatacenterState:
    for vm_id, comp_ids in plan.deactivate.items():
        vm = state.vm(vm_id)
        by_id = {c.id: c for c in vm.components}
        for cid in comp_ids:
            c = by_id.get(cid)
            if c is None:
                raise ValueError(f"VM {vm_id} has no component {cid}")
            if c.mandatory:
                raise ValueError(f"VM {vm_id} component {cid} is mandatory")
        if vm.fully_optional and all(c.id in comp_ids or not c.active for c in vm.optional_components):
            raise ValueError(f"plan would switch off every component of VM {vm_id}")
        for cid in comp_ids:
            by_id[cid].active = False
    return state


def reset_components(state: DatacenterState) -> None:
    for vm in state.vms:
        for c in vm.components:
            c.active = True

