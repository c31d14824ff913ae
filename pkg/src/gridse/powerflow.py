"""Newton-Raphson AC power flow in polar coordinates.

Solves for voltage angles at non-slack buses and magnitudes at PQ buses; PV
and slack magnitudes are held at their setpoints and the slack angle at zero.
The converged state is the ground truth used to synthesize measurements and
to benchmark the estimator.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import BusKind, Network, build_ybus, net_injection_pu


class SingularJacobian(RuntimeError):
    """The power-flow Jacobian could not be factorized."""


@dataclass(frozen=True)
class StateVector:
    """Per-bus voltage angles (rad) and magnitudes (pu).

    Constructors in this package pin the slack angle to exactly 0.
    """

    angles: np.ndarray
    magnitudes: np.ndarray

    def __post_init__(self):
        ang = np.array(self.angles, dtype=float)
        mag = np.array(self.magnitudes, dtype=float)
        if ang.ndim != 1 or mag.shape != ang.shape:
            raise ValueError("angles and magnitudes must be 1-d arrays of equal length")
        if not np.all(np.isfinite(ang)) or not np.all(np.isfinite(mag)):
            raise ValueError("state entries must be finite")
        if not np.all(mag > 0):
            raise ValueError("voltage magnitudes must be > 0")
        ang.setflags(write=False)
        mag.setflags(write=False)
        object.__setattr__(self, "angles", ang)
        object.__setattr__(self, "magnitudes", mag)

    @property
    def n_buses(self) -> int:
        return self.angles.shape[0]


@dataclass(frozen=True)
class PowerFlowResult:
    state: StateVector
    iterations: int
    max_mismatch: float  # pu, infinity norm
    converged: bool


def flat_start(network: Network) -> StateVector:
    """Zero angles; setpoint magnitudes at slack and PV buses, 1.0 at PQ."""
    n = network.n_buses
    mag = np.ones(n)
    for i, bus in enumerate(network.buses):
        if bus.kind is not BusKind.PQ:
            mag[i] = bus.v_setpoint
    return StateVector(angles=np.zeros(n), magnitudes=mag)


def calc_injections(state: StateVector, ybus: np.ndarray):
    """Bus active/reactive injections (pu) implied by a state.

    P_i = V_i sum_j V_j (G_ij cos th_ij + B_ij sin th_ij),
    Q_i = V_i sum_j V_j (G_ij sin th_ij - B_ij cos th_ij).
    """
    v = state.magnitudes * np.exp(1j * state.angles)
    s = v * np.conj(ybus @ v)
    return s.real, s.imag


def injection_jacobian(state: StateVector, ybus: np.ndarray):
    """Partial derivatives of all bus injections w.r.t. all angles and magnitudes.

    Returns (dp_dth, dp_dv, dq_dth, dq_dv), each n x n.
    """
    v = state.magnitudes * np.exp(1j * state.angles)
    i_bus = ybus @ v
    diag_v = np.diag(v)
    diag_i = np.diag(i_bus)
    diag_vn = np.diag(np.exp(1j * state.angles))
    ds_dth = 1j * diag_v @ np.conj(diag_i - ybus @ diag_v)
    ds_dv = diag_v @ np.conj(ybus @ diag_vn) + np.conj(diag_i) @ diag_vn
    return ds_dth.real, ds_dv.real, ds_dth.imag, ds_dv.imag


def _specified_injections(network: Network):
    p = np.empty(network.n_buses)
    q = np.empty(network.n_buses)
    for i, bus in enumerate(network.buses):
        p[i], q[i] = net_injection_pu(bus, network.base_mva)
    return p, q


def solve_power_flow(
    network: Network,
    tol: float = 1e-8,
    max_iter: int = 20,
    initial: StateVector | None = None,
) -> PowerFlowResult:
    """Full Newton power flow.

    Mismatch is (P_spec - P_calc) at non-slack buses and (Q_spec - Q_calc) at
    PQ buses, measured in the infinity norm. `iterations` counts mismatch
    evaluations, so a start already inside tolerance reports 1. On
    non-convergence the best iterate is returned with converged=False.
    """
    if not (tol > 0):
        raise ValueError(f"tol must be > 0, got {tol}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")

    ybus = build_ybus(network)
    slack = network.slack_index
    pq = list(network.pq_indices)
    non_slack = [i for i in range(network.n_buses) if i != slack]
    p_spec, q_spec = _specified_injections(network)

    if initial is None:
        start = flat_start(network)
        ang = np.array(start.angles)
        mag = np.array(start.magnitudes)
    else:
        ang = np.array(initial.angles, dtype=float)
        mag = np.array(initial.magnitudes, dtype=float)
        # pin the knowns regardless of the warm start
        ang[slack] = 0.0
        for i, bus in enumerate(network.buses):
            if bus.kind is not BusKind.PQ:
                mag[i] = bus.v_setpoint

    n_ang = len(non_slack)
    iterations = 0
    converged = False
    mm = np.inf
    for _ in range(max_iter):
        iterations += 1
        state = StateVector(angles=ang, magnitudes=mag)
        p_calc, q_calc = calc_injections(state, ybus)
        mismatch = np.concatenate([(p_spec - p_calc)[non_slack], (q_spec - q_calc)[pq]])
        mm = float(np.max(np.abs(mismatch))) if mismatch.size else 0.0
        if mm < tol:
            converged = True
            break
        dp_dth, dp_dv, dq_dth, dq_dv = injection_jacobian(state, ybus)
        jac = np.block(
            [
                [dp_dth[np.ix_(non_slack, non_slack)], dp_dv[np.ix_(non_slack, pq)]],
                [dq_dth[np.ix_(pq, non_slack)], dq_dv[np.ix_(pq, pq)]],
            ]
        )
        try:
            step = np.linalg.solve(jac, mismatch)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian(f"power-flow Jacobian is singular: {exc}") from exc
        new_ang = ang.copy()
        new_mag = mag.copy()
        new_ang[non_slack] += step[:n_ang]
        new_mag[pq] += step[n_ang:]
        if not (np.all(np.isfinite(new_ang)) and np.all(np.isfinite(new_mag)) and np.all(new_mag > 0)):
            break  # diverged; keep the last physical iterate
        ang, mag = new_ang, new_mag

    state = StateVector(angles=ang, magnitudes=mag)
    if not converged:
        p_calc, q_calc = calc_injections(state, ybus)
        mismatch = np.concatenate([(p_spec - p_calc)[non_slack], (q_spec - q_calc)[pq]])
        mm = float(np.max(np.abs(mismatch))) if mismatch.size else 0.0
        converged = mm < tol
    return PowerFlowResult(state=state, iterations=iterations, max_mismatch=mm, converged=converged)
