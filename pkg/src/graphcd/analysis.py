"""Energy diagnostics, velocity statistics, and experiment runners.

Pure-numpy post-hoc analysis: Dirichlet energy of hidden states, the
analytic decomposition of its time derivative into a convective source
and a diffusive decay, per-node velocity reports correlated with local
label agreement, and the ablation / solver-sensitivity harnesses.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.stats import spearmanr

from . import model as mdl
from .dynamics import DynamicsParams
from .encoding import EncodingConfig
from .graph import Graph, local_homophily
from .solvers import SolverConfig, Trajectory
from .tensor import Tensor


def dirichlet_energy(h: np.ndarray, adj) -> float:
    """(1/N) sum_ij A_ij ||h_i - h_j||^2, self-loops excluded.

    Each undirected edge contributes once per direction. Non-negative;
    zero iff features are constant on every connected pair.
    """
    h = np.asarray(h, dtype=np.float64)
    a = sp.coo_matrix(adj)
    if a.shape[0] != h.shape[0]:
        raise ValueError("adjacency / feature row mismatch")
    keep = a.row != a.col
    row, col, w = a.row[keep], a.col[keep], a.data[keep]
    diff = h[row] - h[col]
    return float(np.sum(w * (diff * diff).sum(axis=1)) / h.shape[0])


@dataclass
class EnergyTrace:
    times: list
    energies: list
    r_conv: list = field(default_factory=list)
    r_diff: list = field(default_factory=list)


def energy_trace(traj: Trajectory, adj) -> EnergyTrace:
    """Dirichlet energy at every recorded snapshot of a trajectory."""
    if not traj.snapshots:
        raise ValueError("trajectory was recorded without snapshots")
    return EnergyTrace(times=list(traj.times),
                       energies=[dirichlet_energy(s, adj)
                                 for s in traj.snapshots])


@dataclass
class EnergyDerivative:
    r_conv: float
    r_diff: float
    de_dt: float


def energy_derivative_decomposition(h: np.ndarray, att: sp.spmatrix,
                                    u: np.ndarray,
                                    mix: float) -> EnergyDerivative:
    """Convective source and diffusive decay of the energy derivative.

    With L = I - att: r_diff = mix * ||L h||_F^2, r_conv = (1 - mix) *
    sum_i u_i (att h)_i . (L h)_i, and the analytic derivative estimate
    (2/N)(r_conv - r_diff). Exact for symmetric time-constant att when
    the traced energy is (1/N) tr(h^T L h).
    """
    h = np.asarray(h, dtype=np.float64)
    ah = att @ h
    lh = h - ah
    u = np.asarray(u, dtype=np.float64).ravel()
    r_diff = mix * float(np.sum(lh * lh))
    r_conv = (1.0 - mix) * float(np.sum(u[:, None] * ah * lh))
    n = h.shape[0]
    return EnergyDerivative(r_conv=r_conv, r_diff=r_diff,
                            de_dt=2.0 / n * (r_conv - r_diff))


def quadratic_energy(h: np.ndarray, att: sp.spmatrix) -> float:
    """(1/N) tr(h^T (I - att) h); equals half the Dirichlet energy w.r.t.
    att when att is symmetric with unit row sums."""
    h = np.asarray(h, dtype=np.float64)
    lh = h - att @ h
    return float(np.sum(h * lh) / h.shape[0])


# ---------------------------------------------------------------------------
# velocity statistics


@dataclass
class VelocityReport:
    u: np.ndarray
    mean: float
    median: float
    max: float
    h_local: np.ndarray
    spearman_u_vs_h: float


def velocity_stats(u: np.ndarray, g: Graph) -> VelocityReport:
    """Summary of per-node velocities plus their rank correlation with
    each node's same-label neighbor ratio (isolated nodes skipped)."""
    u = np.asarray(u, dtype=np.float64).ravel()
    h_local = local_homophily(g)
    ok = ~np.isnan(h_local)
    if ok.sum() >= 2 and np.ptp(u[ok]) > 0 and np.ptp(h_local[ok]) > 0:
        rho = float(spearmanr(u[ok], h_local[ok]).statistic)
    else:
        rho = float("nan")
    return VelocityReport(u=u, mean=float(u.mean()), median=float(np.median(u)),
                          max=float(u.max()), h_local=h_local,
                          spearman_u_vs_h=rho)


def write_velocity_csv(path, report: VelocityReport, labels: np.ndarray):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", "u", "h_local", "label"])
        for i, (ui, hi, yi) in enumerate(zip(report.u, report.h_local,
                                             labels)):
            w.writerow([i, f"{ui:.12g}",
                        "" if np.isnan(hi) else f"{hi:.12g}", int(yi)])


def write_energy_csv(path, trace: EnergyTrace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "E", "R_conv", "R_diff"])
        rc = trace.r_conv or [""] * len(trace.times)
        rd = trace.r_diff or [""] * len(trace.times)
        for t, e, c, d in zip(trace.times, trace.energies, rc, rd):
            w.writerow([f"{t:.12g}", f"{e:.12g}",
                        c if c == "" else f"{c:.12g}",
                        d if d == "" else f"{d:.12g}"])


# ---------------------------------------------------------------------------
# experiment runners


def variant_config(base: mdl.ModelConfig, name: str) -> mdl.ModelConfig:
    """Resolve a variant label into a concrete model configuration.

    Dynamics labels: adaptive, pure_diffusion, pure_convection,
    equal_weights, fixed_velocity:<v>. Encoder labels: encoding_none,
    encoding_poincare, encoding_lorentz, encoding_tangent.
    """
    if name.startswith("fixed_velocity"):
        v = float(name.split(":", 1)[1]) if ":" in name else 1.0
        dyn = replace(base.dynamics, variant="fixed_velocity",
                      fixed_velocity=v)
        return replace(base, dynamics=dyn)
    if name.startswith("encoding_"):
        kind = name.split("_", 1)[1]
        return replace(base, encoding=EncodingConfig(
            kind=kind, curvature=base.encoding.curvature))
    return replace(base, dynamics=replace(base.dynamics, variant=name))


def ablation_run(g: Graph, base_cfg: mdl.ModelConfig, tc: mdl.TrainConfig,
                 variants, runs) -> list[dict]:
    """Train every variant over the same (split, seed) runs.

    `runs` is a list of (split_dict, seed) pairs. Returns one row per
    variant with mean/std test accuracy; individual run failures are
    recorded in the row's `errors` without aborting the table.
    """
    if not runs:
        raise ValueError("ablation needs at least one (split, seed) run")
    rows = []
    for name in variants:
        cfg = variant_config(base_cfg, name)
        accs, errors = [], []
        for split, seed in runs:
            try:
                res = mdl.train(cfg, replace(tc, seed=seed), g, split)
                accs.append(res.test_acc)
            except (FloatingPointError, ValueError) as e:
                errors.append(str(e))
        rows.append({
            "variant": name,
            "mean_acc": float(np.mean(accs)) if accs else float("nan"),
            "std_acc": float(np.std(accs)) if accs else float("nan"),
            "n_runs": len(accs),
            "errors": errors,
        })
    return rows


def write_ablation_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "mean_acc", "std_acc", "n_runs"])
        for r in rows:
            w.writerow([r["variant"], f"{r['mean_acc']:.12g}",
                        f"{r['std_acc']:.12g}", r["n_runs"]])


def oversmoothing_traces(g: Graph, base_cfg: mdl.ModelConfig, variants,
                         n_steps: int = 30, seed: int = 0) -> dict:
    """Energy evolution of an untrained model under fixed Euler stepping.

    The deep-network regime is probed as `n_steps` equal Euler steps of
    the continuous field; returns {variant: EnergyTrace} measured against
    the graph adjacency.
    """
    tau = base_cfg.solver.horizon / n_steps
    out = {}
    for name in variants:
        cfg = variant_config(base_cfg, name)
        cfg = replace(cfg, solver=replace(cfg.solver, method="euler",
                                          tau=tau, record_trace=True))
        rng = np.random.default_rng(seed)
        params = mdl.init_params(cfg, g, rng)
        _, traj, _ = mdl.forward(cfg, params, g, train_mode=False)
        out[name] = energy_trace(traj, g.adj)
    return out


def solver_sweep(g: Graph, base_cfg: mdl.ModelConfig, tc: mdl.TrainConfig,
                 split, methods=("euler", "rk4", "dopri5"),
                 taus=(0.1, 0.5, 1.0)) -> list[dict]:
    """Grid of solver x step size; records accuracy per cell."""
    rows = []
    for method in methods:
        for tau in taus:
            cfg = replace(base_cfg, solver=replace(
                base_cfg.solver, method=method, tau=tau))
            res = mdl.train(cfg, tc, g, split)
            rows.append({"solver": method, "tau": tau,
                         "test_acc": res.test_acc,
                         "epochs_run": res.epochs_run})
    return rows


def export_embeddings(path, h: np.ndarray):
    """Final hidden rows as CSV for external projection tools."""
    np.savetxt(path, np.asarray(h), delimiter=",", fmt="%.12g")
