"""Fixed-step and embedded adaptive integrators over tape-recorded states.

All state updates are built from differentiable tensor ops, so gradients
flow through the discrete solution (discretize-then-differentiate). The
adaptive controller's accepted step sizes are treated as constants in the
backward pass.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tz
from .tensor import Tensor

METHODS = ("euler", "rk4", "dopri5")


@dataclass(frozen=True)
class SolverConfig:
    method: str = "rk4"
    tau: float = 0.5
    horizon: float = 1.0
    rtol: float = 1e-6
    atol: float = 1e-8
    max_steps: int = 10_000
    record_trace: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown solver '{self.method}'")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.horizon < 0:
            raise ValueError("horizon must be non-negative")
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("rtol and atol must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass
class Trajectory:
    """Integration record: final state plus optional per-step trace."""

    times: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    mean_velocities: list = field(default_factory=list)
    final: Tensor | None = None
    n_steps: int = 0


class FunctionDynamics:
    """Adapter exposing a plain f(t, y) as a Dynamics-shaped object."""

    def __init__(self, f):
        self.f = f

    def begin_step(self, h, t, dt):
        return None

    def rhs(self, h, u, t):
        return self.f(t, h)

    def current_velocity(self):
        return np.zeros((1, 1))


def _record(traj: Trajectory, cfg: SolverConfig, dyn, t: float, h: Tensor):
    if cfg.record_trace:
        traj.times.append(t)
        traj.snapshots.append(h.data.copy())
        traj.mean_velocities.append(float(dyn.current_velocity().mean()))


def _check_finite(h: Tensor, step: int, method: str):
    if not np.all(np.isfinite(h.data)):
        raise FloatingPointError(
            f"{method}: non-finite state at step {step}")


def integrate(dyn, h0: Tensor, cfg: SolverConfig) -> Trajectory:
    """Advance h0 from t=0 to t=cfg.horizon with the configured method.

    Fixed-step methods take ceil(horizon/tau) steps, shortening the last
    step to land exactly on the horizon. A zero horizon returns the
    initial state untouched.
    """
    if cfg.method == "dopri5":
        return dopri5_adaptive(dyn, h0, cfg)
    traj = Trajectory()
    h, t = h0, 0.0
    _record(traj, cfg, dyn, t, h)
    if cfg.horizon == 0.0:
        traj.final = h
        return traj
    n_steps = int(np.ceil(cfg.horizon / cfg.tau - 1e-12))
    if n_steps > cfg.max_steps:
        raise ValueError(f"{n_steps} steps exceed max_steps={cfg.max_steps}")
    for step in range(n_steps):
        dt = min(cfg.tau, cfg.horizon - t)
        u = dyn.begin_step(h, t, dt)
        if cfg.method == "euler":
            h = tz.add(h, tz.scale(dyn.rhs(h, u, t), dt))
        else:
            h = _rk4_step(dyn, h, u, t, dt)
        t = min(t + dt, cfg.horizon)
        _check_finite(h, step, cfg.method)
        _record(traj, cfg, dyn, t, h)
    traj.final = h
    traj.n_steps = n_steps
    return traj


def _rk4_step(dyn, h: Tensor, u, t: float, dt: float) -> Tensor:
    k1 = dyn.rhs(h, u, t)
    k2 = dyn.rhs(tz.add(h, tz.scale(k1, dt / 2)), u, t + dt / 2)
    k3 = dyn.rhs(tz.add(h, tz.scale(k2, dt / 2)), u, t + dt / 2)
    k4 = dyn.rhs(tz.add(h, tz.scale(k3, dt)), u, t + dt)
    incr = tz.add(tz.add(k1, k4), tz.scale(tz.add(k2, k3), 2.0))
    return tz.add(h, tz.scale(incr, dt / 6))


# Dormand-Prince 5(4) tableau.
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784,
                   11 / 84, 0.0])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640,
                   -92097 / 339200, 187 / 2100, 1 / 40])


def _combine(h: Tensor, ks, coeffs, dt: float) -> Tensor:
    out = h
    for k, c in zip(ks, coeffs):
        if c != 0.0:
            out = tz.add(out, tz.scale(k, c * dt))
    return out


def dopri5_adaptive(dyn, h0: Tensor, cfg: SolverConfig) -> Trajectory:
    """Embedded 5(4) pair with proportional step-size control.

    Error norm is the RMS of err / (atol + rtol * max(|y5|, |y4|));
    accept when <= 1. Controller: factor = 0.9 * norm^(-1/5) clamped to
    [0.2, 5]. The final step is truncated to land exactly on the horizon.
    """
    traj = Trajectory()
    h, t = h0, 0.0
    _record(traj, cfg, dyn, t, h)
    if cfg.horizon == 0.0:
        traj.final = h
        return traj
    dt = min(cfg.tau, cfg.horizon)
    dt_min = cfg.horizon * 1e-10
    steps = 0
    while t < cfg.horizon - 1e-12 * cfg.horizon:
        if steps >= cfg.max_steps:
            raise ValueError(f"dopri5 exceeded max_steps={cfg.max_steps}")
        dt = min(dt, cfg.horizon - t)
        u = dyn.begin_step(h, t, dt)
        ks = []
        for i in range(7):
            stage = _combine(h, ks, _DP_A[i], dt)
            ks.append(dyn.rhs(stage, u, t + _DP_C[i] * dt))
        y5 = _combine(h, ks, _DP_B5, dt)
        y4 = _combine(h, ks, _DP_B4, dt)
        err = y5.data - y4.data
        tol = cfg.atol + cfg.rtol * np.maximum(np.abs(y5.data),
                                               np.abs(y4.data))
        norm = float(np.sqrt(np.mean((err / tol) ** 2)))
        steps += 1
        if norm <= 1.0:
            h, t = y5, t + dt
            _check_finite(h, steps, "dopri5")
            _record(traj, cfg, dyn, t, h)
        else:
            # rejected: roll back the velocity accumulation for this trial
            if hasattr(dyn, "rollback"):
                dyn.rollback()
        factor = 0.9 * (norm ** -0.2) if norm > 0 else 5.0
        dt = dt * min(5.0, max(0.2, factor))
        if dt < dt_min:
            raise FloatingPointError(
                "dopri5 step underflow: stiffness or divergence")
    traj.final = h
    traj.n_steps = steps
    return traj


def convergence_order_probe(make_dyn, h0_value, method: str, taus,
                            horizon: float, reference: np.ndarray) -> float:
    """Empirical global order: log-log slope of final error versus tau.

    `make_dyn()` must build a fresh dynamics object per run (stateful
    velocity must not leak between step sizes). Raises on a degenerate
    (error-free) problem.
    """
    taus = list(taus)
    if len(taus) < 3:
        raise ValueError("need at least 3 step sizes")
    errs = []
    for tau in taus:
        cfg = SolverConfig(method=method, tau=tau, horizon=horizon)
        traj = integrate(make_dyn(), Tensor(h0_value), cfg)
        errs.append(float(np.max(np.abs(traj.final.data - reference))))
    if max(errs) < 1e-14:
        raise ValueError("degenerate problem: zero error at every step size")
    slope = np.polyfit(np.log(taus), np.log(np.maximum(errs, 1e-300)), 1)[0]
    return float(slope)


def write_trace_csv(path, traj: Trajectory, energies) -> None:
    """Trace export: t, dirichlet_energy, mean_velocity rows."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "dirichlet_energy", "mean_velocity"])
        for t, e, v in zip(traj.times, energies, traj.mean_velocities):
            w.writerow([f"{t:.12g}", f"{e:.12g}", f"{v:.12g}"])
