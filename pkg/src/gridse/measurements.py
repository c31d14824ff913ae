"""Measurement functions, their analytic Jacobian, and synthetic metering.

A measurement set holds values z and standard deviations sigma; h(x) covers
voltage magnitude, bus injection and branch flow quantities. State
coordinates are ordered as all non-slack angles followed by all magnitudes,
so the Jacobian has shape (m, 2*n_buses - 1).

Synthetic measurements are drawn from independent per-measurement PCG64
streams keyed by (seed, measurement index), so generation is a pure function
of its inputs and adding a measurement never perturbs the draws of others.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .network import Network
from .powerflow import StateVector, calc_injections, injection_jacobian

V_MAG = "v_mag"
P_INJ = "p_inj"
Q_INJ = "q_inj"
P_FLOW = "p_flow"
Q_FLOW = "q_flow"

FROM = "from"
TO = "to"

DEFAULT_SIGMA_V = 0.004
DEFAULT_SIGMA_INJ = 0.01
DEFAULT_SIGMA_FLOW = 0.008

_BUS_QUANTITIES = (V_MAG, P_INJ, Q_INJ)
_FLOW_QUANTITIES = (P_FLOW, Q_FLOW)


@dataclass(frozen=True)
class MeasurementKind:
    quantity: str
    bus: Optional[int] = None     # 1-based bus id for bus quantities
    branch: Optional[int] = None  # 0-based index into network.branches
    end: Optional[str] = None     # FROM or TO for flow quantities

    def __post_init__(self):
        if self.quantity in _BUS_QUANTITIES:
            if self.bus is None or self.branch is not None or self.end is not None:
                raise ValueError(f"{self.quantity} measurement must reference a bus only")
        elif self.quantity in _FLOW_QUANTITIES:
            if self.branch is None or self.end not in (FROM, TO) or self.bus is not None:
                raise ValueError(f"{self.quantity} measurement must reference a branch and an end")
        else:
            raise ValueError(f"unknown measurement quantity {self.quantity!r}")

    @classmethod
    def voltage_magnitude(cls, bus: int):
        return cls(V_MAG, bus=bus)

    @classmethod
    def active_injection(cls, bus: int):
        return cls(P_INJ, bus=bus)

    @classmethod
    def reactive_injection(cls, bus: int):
        return cls(Q_INJ, bus=bus)

    @classmethod
    def active_flow(cls, branch: int, end: str = FROM):
        return cls(P_FLOW, branch=branch, end=end)

    @classmethod
    def reactive_flow(cls, branch: int, end: str = FROM):
        return cls(Q_FLOW, branch=branch, end=end)


@dataclass(frozen=True)
class Measurement:
    kind: MeasurementKind
    value: float  # pu
    sigma: float  # pu

    def __post_init__(self):
        if not (self.sigma > 0):
            raise ValueError(f"sigma must be > 0, got {self.sigma}")


@dataclass(frozen=True)
class MeasurementSet:
    measurements: tuple

    def __post_init__(self):
        object.__setattr__(self, "measurements", tuple(self.measurements))

    def __len__(self) -> int:
        return len(self.measurements)

    def __iter__(self):
        return iter(self.measurements)

    @property
    def kinds(self) -> list:
        return [m.kind for m in self.measurements]

    @property
    def values(self) -> np.ndarray:
        return np.array([m.value for m in self.measurements])

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([m.sigma for m in self.measurements])


def validate_kinds(kinds: Sequence[MeasurementKind], network: Network) -> None:
    n = network.n_buses
    nbr = len(network.branches)
    for i, kind in enumerate(kinds):
        if kind.bus is not None and not (1 <= kind.bus <= n):
            raise ValueError(f"measurement {i}: bus {kind.bus} does not exist")
        if kind.branch is not None and not (0 <= kind.branch < nbr):
            raise ValueError(f"measurement {i}: branch index {kind.branch} does not exist")


def state_size(network: Network) -> int:
    """Number of state coordinates: non-slack angles plus all magnitudes."""
    return 2 * network.n_buses - 1


def state_to_vector(state: StateVector, network: Network) -> np.ndarray:
    """Flatten a state into [theta at non-slack buses, all magnitudes]."""
    slack = network.slack_index
    non_slack = [i for i in range(network.n_buses) if i != slack]
    return np.concatenate([state.angles[non_slack], state.magnitudes])


def vector_to_state(x: np.ndarray, network: Network) -> StateVector:
    """Inverse of state_to_vector; the slack angle is pinned to 0."""
    n = network.n_buses
    slack = network.slack_index
    angles = np.zeros(n)
    non_slack = [i for i in range(n) if i != slack]
    angles[non_slack] = x[: n - 1]
    return StateVector(angles=angles, magnitudes=np.array(x[n - 1 :]))


def _branch_constants(network: Network, branch_idx: int):
    br = network.branches[branch_idx]
    ys = br.series_admittance()
    return br.from_bus - 1, br.to_bus - 1, ys.real, ys.imag, br.half_charging


def _flow_value(kind, state, network):
    f, t, g, b, bsh = _branch_constants(network, kind.branch)
    i, j = (f, t) if kind.end == FROM else (t, f)
    vi = state.magnitudes[i]
    vj = state.magnitudes[j]
    thij = state.angles[i] - state.angles[j]
    c, s = np.cos(thij), np.sin(thij)
    if kind.quantity == P_FLOW:
        return vi * vi * g - vi * vj * (g * c + b * s)
    return -vi * vi * (b + bsh) - vi * vj * (g * s - b * c)


def evaluate_kinds(kinds: Sequence[MeasurementKind], state: StateVector, network: Network, ybus: np.ndarray) -> np.ndarray:
    """h(x) for a list of measurement kinds, in order."""
    p_inj = q_inj = None
    if any(k.quantity in (P_INJ, Q_INJ) for k in kinds):
        p_inj, q_inj = calc_injections(state, ybus)
    out = np.empty(len(kinds))
    for i, kind in enumerate(kinds):
        if kind.quantity == V_MAG:
            out[i] = state.magnitudes[kind.bus - 1]
        elif kind.quantity == P_INJ:
            out[i] = p_inj[kind.bus - 1]
        elif kind.quantity == Q_INJ:
            out[i] = q_inj[kind.bus - 1]
        else:
            out[i] = _flow_value(kind, state, network)
    return out


def evaluate_h(mset: MeasurementSet, state: StateVector, network: Network, ybus: np.ndarray) -> np.ndarray:
    return evaluate_kinds(mset.kinds, state, network, ybus)


def jacobian_h(mset: MeasurementSet, state: StateVector, network: Network, ybus: np.ndarray) -> np.ndarray:
    """Analytic Jacobian of h w.r.t. [theta at non-slack buses, all magnitudes]."""
    kinds = mset.kinds if isinstance(mset, MeasurementSet) else list(mset)
    n = network.n_buses
    slack = network.slack_index
    # column of the angle of bus i (0-based), or -1 for the slack reference
    ang_col = np.full(n, -1, dtype=int)
    col = 0
    for i in range(n):
        if i != slack:
            ang_col[i] = col
            col += 1
    v_col0 = n - 1

    need_inj = any(k.quantity in (P_INJ, Q_INJ) for k in kinds)
    if need_inj:
        dp_dth, dp_dv, dq_dth, dq_dv = injection_jacobian(state, ybus)
    h_mat = np.zeros((len(kinds), 2 * n - 1))
    vm = state.magnitudes
    th = state.angles

    for row, kind in enumerate(kinds):
        if kind.quantity == V_MAG:
            h_mat[row, v_col0 + kind.bus - 1] = 1.0
        elif kind.quantity in (P_INJ, Q_INJ):
            i = kind.bus - 1
            dth = dp_dth[i] if kind.quantity == P_INJ else dq_dth[i]
            dv = dp_dv[i] if kind.quantity == P_INJ else dq_dv[i]
            for j in range(n):
                if j != slack:
                    h_mat[row, ang_col[j]] = dth[j]
                h_mat[row, v_col0 + j] = dv[j]
        else:
            f, t, g, b, bsh = _branch_constants(network, kind.branch)
            i, j = (f, t) if kind.end == FROM else (t, f)
            vi, vj = vm[i], vm[j]
            thij = th[i] - th[j]
            c, s = np.cos(thij), np.sin(thij)
            if kind.quantity == P_FLOW:
                dth_i = vi * vj * (g * s - b * c)
                dv_i = 2 * vi * g - vj * (g * c + b * s)
                dv_j = -vi * (g * c + b * s)
            else:
                dth_i = -vi * vj * (g * c + b * s)
                dv_i = -2 * vi * (b + bsh) - vj * (g * s - b * c)
                dv_j = -vi * (g * s - b * c)
            if i != slack:
                h_mat[row, ang_col[i]] = dth_i
            if j != slack:
                h_mat[row, ang_col[j]] = -dth_i
            h_mat[row, v_col0 + i] = dv_i
            h_mat[row, v_col0 + j] = dv_j
    return h_mat


def generate_measurements(
    truth: StateVector,
    plan: Sequence,
    seed: int,
    network: Network,
    ybus: np.ndarray,
    noise: bool = True,
) -> MeasurementSet:
    """Synthetic z = h(truth) + e for a plan of (kind, sigma) pairs.

    Errors are zero-mean normal draws, one per measurement, from PCG64
    streams seeded with (seed, index). With noise=False the values equal
    h(truth) exactly while keeping the plan sigmas.
    """
    if seed < 0:
        raise ValueError(f"seed must be a non-negative integer, got {seed}")
    kinds = [kind for kind, _ in plan]
    sigmas = np.array([sigma for _, sigma in plan], dtype=float)
    if not np.all(sigmas > 0):
        raise ValueError("all plan sigmas must be > 0")
    validate_kinds(kinds, network)
    h_true = evaluate_kinds(kinds, truth, network, ybus)
    values = h_true.copy()
    if noise:
        for i, sigma in enumerate(sigmas):
            rng = np.random.default_rng([seed, i])
            values[i] += sigma * rng.standard_normal()
    measurements = tuple(
        Measurement(kind=kind, value=float(v), sigma=float(s))
        for kind, v, s in zip(kinds, values, sigmas)
    )
    return MeasurementSet(measurements=measurements)


def full_measurement_plan(
    network: Network,
    sigma_v: float = DEFAULT_SIGMA_V,
    sigma_inj: float = DEFAULT_SIGMA_INJ,
    sigma_flow: float = DEFAULT_SIGMA_FLOW,
) -> list:
    """Every bus voltage, every bus P/Q injection, every branch P/Q flow at
    both ends: m = n + 2n + 4*branches."""
    for name, s in (("sigma_v", sigma_v), ("sigma_inj", sigma_inj), ("sigma_flow", sigma_flow)):
        if not (s > 0):
            raise ValueError(f"{name} must be > 0, got {s}")
    plan = []
    for bus in network.buses:
        plan.append((MeasurementKind.voltage_magnitude(bus.id), sigma_v))
    for bus in network.buses:
        plan.append((MeasurementKind.active_injection(bus.id), sigma_inj))
    for bus in network.buses:
        plan.append((MeasurementKind.reactive_injection(bus.id), sigma_inj))
    for idx in range(len(network.branches)):
        plan.append((MeasurementKind.active_flow(idx, FROM), sigma_flow))
        plan.append((MeasurementKind.active_flow(idx, TO), sigma_flow))
        plan.append((MeasurementKind.reactive_flow(idx, FROM), sigma_flow))
        plan.append((MeasurementKind.reactive_flow(idx, TO), sigma_flow))
    return plan
