"""Convection-diffusion right-hand side over a graph.

The hidden state evolves as

    dH/dt = (1 - m) * [u  (A_eps H)] + m * (A - I) H

where A is an attention-normalized, row-stochastic matrix over the 1-hop
support, A_eps the same normalization over the eps-hop support, u a
per-node velocity derived from accumulated incoming flux, and m a mixing
scalar estimated from label agreement on the training nodes. The second
term smooths features toward neighborhood averages; the first transports
neighborhood aggregates at node-specific rates, which counteracts the
collapse of feature variance under long integration times.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as tz
from .tensor import SparseMatrix, Tensor

VARIANTS = ("adaptive", "pure_diffusion", "pure_convection",
            "equal_weights", "fixed_velocity")


@dataclass(frozen=True)
class DynamicsParams:
    """Structural and behavioral knobs of the dynamics field."""

    eps: int = 1
    self_loop_weight: float = 1.0
    variant: str = "adaptive"
    fixed_velocity: float = 1.0
    u_max: float = 10.0
    u_init: float = 1.0
    kappa: float = 0.25

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant '{self.variant}'")
        if self.eps < 1:
            raise ValueError("eps must be >= 1")
        if self.u_max <= 0 or self.kappa <= 0:
            raise ValueError("u_max and kappa must be positive")
        if self.u_init < 0 or self.fixed_velocity < 0:
            raise ValueError("velocities must be non-negative")


@dataclass
class AttentionKernel:
    """Score projections and the masked support they normalize over."""

    w_k: Tensor
    w_q: Tensor
    d_k: int
    mask: SparseMatrix

    def __post_init__(self):
        if self.d_k < 1:
            raise ValueError("d_k must be >= 1")
        if np.any(np.diff(self.mask.indptr) == 0):
            raise ValueError("support has an empty row; self-loops missing")


def attention_values(h: Tensor, kernel: AttentionKernel) -> Tensor:
    """Per-edge row-stochastic weights over the kernel's support.

    Scores are scaled key/query inner products; normalization is a
    weighted row softmax whose weights are the support's structural
    values (1 off-diagonal, the self-loop weight on the diagonal).
    """
    if not np.all(np.isfinite(h.data)):
        raise ValueError("non-finite hidden state in attention")
    k = tz.matmul(h, kernel.w_k)
    q = tz.matmul(h, kernel.w_q)
    scores = tz.edge_dot(k, q, kernel.mask.rows, kernel.mask.indices,
                         denom=float(np.sqrt(kernel.d_k)))
    return tz.segment_softmax(scores, kernel.mask, weights=kernel.mask.values)


def diffusion_rhs(h: Tensor, alpha: Tensor, support: SparseMatrix) -> Tensor:
    """Neighborhood-average drift: row i gets sum_j A_ij (h_j - h_i)."""
    return tz.sub(tz.edge_weighted_sum(alpha, h, support), h)


def convection_rhs(h: Tensor, alpha: Tensor, support: SparseMatrix,
                   u: Tensor) -> Tensor:
    """Velocity-scaled transport: row i gets u_i * sum_j A_ij h_j."""
    if np.any(u.data < 0):
        raise ValueError("negative velocity reached convection term")
    return tz.row_scale(u, tz.edge_weighted_sum(alpha, h, support))


@dataclass
class VelocityState:
    """Running per-node flux integral and the velocity derived from it.

    `acc` holds the accumulated windowed flux-norm integral (warm-started
    at u_init * horizon so the initial velocity equals u_init); `theta`
    reparameterizes each node's active window end t_i = horizon * sigmoid
    (theta_i). Velocity is min(acc / horizon, u_max), so it is non-negative
    and saturates at u_max.
    """

    acc: Tensor
    theta: Tensor
    horizon: float
    u_max: float
    kappa: float

    @classmethod
    def initial(cls, theta: Tensor, horizon: float, u_max: float,
                kappa: float, u_init: float) -> "VelocityState":
        n = theta.data.shape[0]
        acc = Tensor(np.full((n, 1), u_init * horizon))
        return cls(acc=acc, theta=theta, horizon=horizon, u_max=u_max,
                   kappa=kappa)

    def window_weight(self, t_now: float) -> Tensor:
        """Soft indicator that t_now lies inside each node's window."""
        t_i = tz.scale(tz.sigmoid(self.theta), self.horizon)
        return tz.sigmoid(tz.scale(tz.sub(t_i, Tensor(t_now)),
                                   1.0 / self.kappa))

    def advance(self, flux: Tensor, t_now: float, dt: float) -> "VelocityState":
        """Accumulate the windowed flux norm over one accepted step."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        gain = tz.mul(self.window_weight(t_now), tz.row_norm(flux))
        return replace(self, acc=tz.add(self.acc, tz.scale(gain, dt)))

    def velocity(self) -> Tensor:
        return tz.clip_max(tz.scale(self.acc, 1.0 / self.horizon), self.u_max)


def update_velocity(vs: VelocityState, flux: Tensor, tau: float,
                    t_now: float = 0.0) -> VelocityState:
    """One accumulation step; see VelocityState.advance."""
    return vs.advance(flux, t_now, tau)


def learnable_homophily(soft_preds: np.ndarray, adj, train_idx) -> float:
    """Label-agreement estimate from soft predictions on training edges.

    Fraction of edges between training nodes whose predicted classes
    agree — the edge homophily of the model's own hard predictions,
    restricted to the training set. Lies in [0, 1]: near 0 when
    neighbors disagree (transport should dominate), near 1 when they
    agree (smoothing should dominate). Detached scalar; returns the
    neutral 0.5 when no training edge exists.
    """
    train_idx = np.asarray(train_idx, dtype=np.intp)
    if train_idx.size == 0:
        raise ValueError("empty training set")
    pred = np.argmax(np.asarray(soft_preds, dtype=np.float64), axis=1)
    in_train = np.zeros(adj.shape[0], dtype=bool)
    in_train[train_idx] = True
    coo = adj.tocoo()
    keep = in_train[coo.row] & in_train[coo.col]
    rows, cols = coo.row[keep], coo.col[keep]
    if rows.size == 0:
        return 0.5
    return float(np.mean(pred[rows] == pred[cols]))


class Dynamics:
    """Stateful right-hand side consumed by the integrators.

    `begin_step` is called once per accepted solver step at the pre-step
    state: it advances the velocity integral and returns the velocity to
    hold fixed across the step's internal stages. `rhs` evaluates the
    derivative at any stage state with that held velocity.
    """

    def __init__(self, params: DynamicsParams, kernel_1hop: AttentionKernel,
                 kernel_eps: AttentionKernel, mix: Tensor,
                 velocity: VelocityState):
        self.params = params
        self.kernel_1hop = kernel_1hop
        self.kernel_eps = kernel_eps
        self.mix = mix
        self.velocity_state = velocity
        self._coeffs = self._mixing_coefficients()

    def _mixing_coefficients(self):
        v = self.params.variant
        if v in ("adaptive",):
            return self.mix, tz.sub(Tensor(1.0), self.mix)
        if v == "pure_diffusion":
            return Tensor(1.0), Tensor(0.0)
        if v == "pure_convection":
            return Tensor(0.0), Tensor(1.0)
        if v == "equal_weights":
            return Tensor(0.5), Tensor(0.5)
        return self.mix, tz.sub(Tensor(1.0), self.mix)  # fixed_velocity

    def flux(self, h: Tensor) -> Tensor:
        """Incoming aggregate over the eps-hop support at state h."""
        alpha = attention_values(h, self.kernel_eps)
        return tz.edge_weighted_sum(alpha, h, self.kernel_eps.mask)

    def begin_step(self, h: Tensor, t: float, dt: float) -> Tensor:
        if self.params.variant == "fixed_velocity":
            n = h.data.shape[0]
            return Tensor(np.full((n, 1), self.params.fixed_velocity))
        self._prev_velocity_state = self.velocity_state
        self.velocity_state = self.velocity_state.advance(self.flux(h), t, dt)
        return self.velocity_state.velocity()

    def rollback(self):
        """Undo the last begin_step accumulation (rejected trial step)."""
        if self.params.variant != "fixed_velocity":
            self.velocity_state = self._prev_velocity_state

    def rhs(self, h: Tensor, u: Tensor, t: float) -> Tensor:
        if not np.all(np.isfinite(h.data)):
            raise FloatingPointError(
                f"non-finite hidden state at t={t:.4g} in dynamics evaluation")
        diff_c, conv_c = self._coeffs
        alpha1 = attention_values(h, self.kernel_1hop)
        out = tz.mul(diff_c, diffusion_rhs(h, alpha1, self.kernel_1hop.mask))
        if self.kernel_eps is self.kernel_1hop:
            alpha_e = alpha1
        else:
            alpha_e = attention_values(h, self.kernel_eps)
        conv = convection_rhs(h, alpha_e, self.kernel_eps.mask, u)
        return tz.add(out, tz.mul(conv_c, conv))

    def current_velocity(self) -> np.ndarray:
        """Detached per-node velocity column for tracing."""
        vs = self.velocity_state
        if self.params.variant == "fixed_velocity":
            return np.full((vs.theta.data.shape[0], 1),
                           self.params.fixed_velocity)
        return np.minimum(vs.acc.data / vs.horizon, vs.u_max)
