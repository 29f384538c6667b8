"""Model assembly, loss, optimizer, and the training loop.

Pipeline: input dropout -> affine lift -> positional-encoding concat ->
affine fuse -> continuous-time integration of the convection-diffusion
field -> dropout -> affine decode to class logits. Training is
full-graph transductive with an adaptive-moment optimizer, decoupled
weight decay, validation-accuracy early stopping, and best-snapshot
reporting.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as tz
from .dynamics import (AttentionKernel, Dynamics, DynamicsParams,
                       VelocityState, learnable_homophily)
from .encoding import EncodingConfig, apply_encoding, encoded_dim
from .graph import Graph, khop_support
from .solvers import SolverConfig, Trajectory, integrate
from .tensor import Tape, Tensor


@dataclass(frozen=True)
class ModelConfig:
    hidden_dim: int = 64
    input_dropout: float = 0.2
    dropout: float = 0.2
    d_k: int = 16
    encoding: EncodingConfig = field(default_factory=EncodingConfig)
    dynamics: DynamicsParams = field(default_factory=DynamicsParams)
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        for r in (self.input_dropout, self.dropout):
            if not 0.0 <= r < 1.0:
                raise ValueError("dropout rates must lie in [0, 1)")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 0.005
    weight_decay: float = 5e-3
    seed: int = 0
    patience: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class RunResult:
    params: dict
    train_losses: list
    valid_accs: list
    test_acc: float
    final_mix: float
    final_mean_velocity: float
    wall_seconds: float
    epochs_run: int


def _glorot(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(cfg: ModelConfig, g: Graph, rng) -> dict:
    """All trainable tensors plus the non-optimized mixing scalar `mix`."""
    d_in, h = g.features.shape[1], cfg.hidden_dim
    d_enc = encoded_dim(h, cfg.encoding)
    p = {
        "w_in": Tensor(_glorot(rng, d_in, h), requires_grad=True),
        "b_in": Tensor(np.zeros((1, h)), requires_grad=True),
        "w_fuse": Tensor(_glorot(rng, d_enc, h), requires_grad=True),
        "b_fuse": Tensor(np.zeros((1, h)), requires_grad=True),
        "w_k": Tensor(_glorot(rng, h, cfg.d_k), requires_grad=True),
        "w_q": Tensor(_glorot(rng, h, cfg.d_k), requires_grad=True),
        "theta": Tensor(np.zeros((g.num_nodes, 1)), requires_grad=True),
        "w_out": Tensor(_glorot(rng, h, g.num_classes), requires_grad=True),
        "b_out": Tensor(np.zeros((1, g.num_classes)), requires_grad=True),
        # label-agreement mixing scalar: receives gradients for
        # diagnostics but is updated from soft predictions, not by the
        # optimizer
        "mix": Tensor(np.array([[0.5]]), requires_grad=True),
    }
    return p


OPTIMIZED = ("w_in", "b_in", "w_fuse", "b_fuse", "w_k", "w_q", "theta",
             "w_out", "b_out")


def build_supports(cfg: ModelConfig, g: Graph):
    """(1-hop support, eps-hop support) with self-loop weights applied."""
    s1 = khop_support(g, 1, cfg.dynamics.self_loop_weight)
    if cfg.dynamics.eps == 1:
        return s1, s1
    return s1, khop_support(g, cfg.dynamics.eps, cfg.dynamics.self_loop_weight)


def _affine(h, w, b):
    return tz.add(tz.matmul(h, w), b)


def forward(cfg: ModelConfig, params: dict, g: Graph, train_mode: bool,
            rng=None, supports=None) -> tuple[Tensor, Trajectory, Dynamics]:
    """Logits plus the integration trajectory and final dynamics state."""
    if supports is None:
        supports = build_supports(cfg, g)
    s1, se = supports
    if train_mode and rng is None:
        raise ValueError("train_mode forward needs an RNG for dropout")
    x = Tensor(g.features)
    x = tz.dropout(x, cfg.input_dropout, rng, train_mode)
    h = _affine(x, params["w_in"], params["b_in"])
    h = apply_encoding(h, cfg.encoding)
    h = _affine(h, params["w_fuse"], params["b_fuse"])

    kern1 = AttentionKernel(params["w_k"], params["w_q"], cfg.d_k, s1)
    kerne = kern1 if se is s1 else AttentionKernel(
        params["w_k"], params["w_q"], cfg.d_k, se)
    dp = cfg.dynamics
    horizon = max(cfg.solver.horizon, 1e-12)
    vs = VelocityState.initial(params["theta"], horizon=horizon,
                               u_max=dp.u_max, kappa=dp.kappa,
                               u_init=dp.u_init)
    dyn = Dynamics(dp, kern1, kerne, params["mix"], vs)
    traj = integrate(dyn, h, cfg.solver)
    out = tz.dropout(traj.final, cfg.dropout, rng, train_mode)
    logits = _affine(out, params["w_out"], params["b_out"])
    return logits, traj, dyn


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy_loss(logits: Tensor, labels: np.ndarray,
                       mask: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of the true class over masked nodes."""
    mask = np.asarray(mask, dtype=np.intp)
    if mask.size == 0:
        raise ValueError("empty mask in loss")
    sel = tz.slice_rows(logits, mask)
    shift = sel.data.max(axis=1, keepdims=True)  # constant for stability
    z = tz.sub(sel, Tensor(shift))
    ones = Tensor(np.ones((logits.data.shape[1], 1)))
    log_denom = tz.log(tz.matmul(tz.exp(z), ones))
    onehot = np.zeros((mask.size, logits.data.shape[1]))
    onehot[np.arange(mask.size), labels[mask]] = 1.0
    true_logit = tz.matmul(tz.mul(z, Tensor(onehot)), ones)
    return tz.mean_all(tz.sub(log_denom, true_logit))


def accuracy(logits: np.ndarray, labels: np.ndarray, mask) -> float:
    mask = np.asarray(mask, dtype=np.intp)
    if mask.size == 0:
        raise ValueError("empty mask in evaluation")
    pred = np.argmax(logits[mask], axis=1)
    return float(np.mean(pred == labels[mask]))


def evaluate(cfg: ModelConfig, params: dict, g: Graph, mask,
             supports=None) -> float:
    logits, _, _ = forward(cfg, params, g, train_mode=False,
                           supports=supports)
    return accuracy(logits.data, g.labels, mask)


class AdamW:
    """Adaptive moments with decoupled weight decay."""

    def __init__(self, params: dict, names, lr, weight_decay=0.0,
                 beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = {n: params[n] for n in names}
        self.lr, self.wd = lr, weight_decay
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for n, p in self.params.items():
            g = p.grad_or_zero()
            self.m[n] = self.b1 * self.m[n] + (1 - self.b1) * g
            self.v[n] = self.b2 * self.v[n] + (1 - self.b2) * g * g
            update = (self.m[n] / bc1) / (np.sqrt(self.v[n] / bc2) + self.eps)
            p.data -= self.lr * (update + self.wd * p.data)


def train(cfg: ModelConfig, tc: TrainConfig, g: Graph,
          split: dict) -> RunResult:
    """Full training run; deterministic given the seed.

    Each epoch: one gradient step on the training-mask loss, then an
    evaluation-mode forward used both for validation accuracy and for
    refreshing the mixing scalar from detached soft predictions. The
    best-validation snapshot is what gets evaluated on the test mask.
    """
    start = time.perf_counter()
    rng = np.random.default_rng(tc.seed)
    params = init_params(cfg, g, rng)
    supports = build_supports(cfg, g)
    opt = AdamW(params, OPTIMIZED, tc.learning_rate, tc.weight_decay,
                tc.beta1, tc.beta2, tc.adam_eps)
    train_idx = np.asarray(split["train"], dtype=np.intp)
    valid_idx = np.asarray(split["valid"], dtype=np.intp)
    test_idx = np.asarray(split["test"], dtype=np.intp)

    best_acc, best_snap, since_best = -1.0, None, 0
    losses, vaccs = [], []
    final_mean_u = 0.0
    for epoch in range(tc.epochs):
        opt.zero_grad()
        params["mix"].zero_grad()
        with Tape() as tape:
            logits, _, dyn = forward(cfg, params, g, train_mode=True,
                                     rng=rng, supports=supports)
            loss = cross_entropy_loss(logits, g.labels, train_idx)
            tape.backward(loss)
        if not np.isfinite(loss.data[0, 0]):
            raise FloatingPointError(f"non-finite loss at epoch {epoch}")
        opt.step()
        losses.append(float(loss.data[0, 0]))

        eval_logits, _, eval_dyn = forward(cfg, params, g, train_mode=False,
                                           supports=supports)
        vacc = accuracy(eval_logits.data, g.labels, valid_idx)
        vaccs.append(vacc)
        final_mean_u = float(eval_dyn.current_velocity().mean())
        soft = softmax_rows(eval_logits.data)
        params["mix"].data[0, 0] = learnable_homophily(soft, g.adj, train_idx)

        if vacc > best_acc:
            best_acc, since_best = vacc, 0
            best_snap = {n: p.data.copy() for n, p in params.items()}
        else:
            since_best += 1
            if since_best >= tc.patience:
                break

    for n, p in params.items():
        p.data = best_snap[n].copy()
    test_logits, _, test_dyn = forward(cfg, params, g, train_mode=False,
                                       supports=supports)
    return RunResult(
        params={n: p.data.copy() for n, p in params.items()},
        train_losses=losses, valid_accs=vaccs,
        test_acc=accuracy(test_logits.data, g.labels, test_idx),
        final_mix=float(params["mix"].data[0, 0]),
        final_mean_velocity=float(test_dyn.current_velocity().mean()),
        wall_seconds=time.perf_counter() - start,
        epochs_run=len(losses))


def result_to_json(res: RunResult, cfg: ModelConfig, tc: TrainConfig,
                   include_timing: bool = True) -> dict:
    doc = {
        "test_acc": res.test_acc,
        "final_mix": res.final_mix,
        "final_mean_velocity": res.final_mean_velocity,
        "epochs_run": res.epochs_run,
        "train_losses": res.train_losses,
        "valid_accs": res.valid_accs,
        "config": config_echo(cfg, tc),
    }
    if include_timing:
        doc["wall_seconds"] = res.wall_seconds
    return doc


def config_echo(cfg: ModelConfig, tc: TrainConfig | None = None) -> dict:
    doc = {
        "hidden_dim": cfg.hidden_dim,
        "input_dropout": cfg.input_dropout,
        "dropout": cfg.dropout,
        "d_k": cfg.d_k,
        "encoding": {"kind": cfg.encoding.kind,
                     "curvature": cfg.encoding.curvature},
        "dynamics": {
            "eps": cfg.dynamics.eps,
            "self_loop_weight": cfg.dynamics.self_loop_weight,
            "variant": cfg.dynamics.variant,
            "fixed_velocity": cfg.dynamics.fixed_velocity,
            "u_max": cfg.dynamics.u_max,
            "u_init": cfg.dynamics.u_init,
            "kappa": cfg.dynamics.kappa,
        },
        "solver": {
            "method": cfg.solver.method,
            "tau": cfg.solver.tau,
            "horizon": cfg.solver.horizon,
            "rtol": cfg.solver.rtol,
            "atol": cfg.solver.atol,
        },
    }
    if tc is not None:
        doc["train"] = {
            "epochs": tc.epochs, "learning_rate": tc.learning_rate,
            "weight_decay": tc.weight_decay, "seed": tc.seed,
            "patience": tc.patience,
        }
    return doc


def save_params(params: dict, path):
    np.savez(path, **{n: p.data for n, p in params.items()})


def load_params(path) -> dict:
    with np.load(path) as z:
        return {n: Tensor(z[n], requires_grad=True) for n in z.files}
