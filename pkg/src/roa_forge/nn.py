"""Small tanh MLP with hand-written reverse-mode gradients and Adam training.

The learner fits ``omega(T(S))`` to the finite-horizon targets (data term)
while penalizing the Bellman residual
``omega(T({x})) - omega(T(F({x}))) - xi({x}) (1 - omega(T(F({x}))))``
(physics term).  Both terms share one network, so the physics term needs
two forward passes whose gradients are summed.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import dynamics as dyn
from . import value
from .errors import ContractViolation, TrainingAborted
from .set_geometry import embed_singletons

logger = logging.getLogger(__name__)


class MlpModel:
    """Affine layers with tanh on hidden layers and a linear scalar output."""

    def __init__(self, weights, biases, embedding="interval", system=None):
        self.weights = [np.asarray(W, dtype=float) for W in weights]
        self.biases = [np.asarray(b, dtype=float).reshape(-1) for b in biases]
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ContractViolation("need one bias vector per weight matrix")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape[0] != b.shape[0]:
                raise ContractViolation(f"layer {k}: weight rows and bias length differ")
            if k > 0 and W.shape[1] != self.weights[k - 1].shape[0]:
                raise ContractViolation(f"layer {k}: input width does not chain")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ContractViolation(f"layer {k}: non-finite parameters")
        if self.weights[-1].shape[0] != 1:
            raise ContractViolation("output layer must have a single unit")
        self.embedding = embedding
        self.system = system

    @classmethod
    def initialize(cls, layer_dims, seed=0, embedding="interval", system=None):
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, embedding, system)

    @property
    def layer_dims(self) -> list:
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def get_flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in zip(self.weights, self.biases)])

    def set_flat(self, theta) -> None:
        theta = np.asarray(theta, dtype=float)
        pos = 0
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[k] = theta[pos: pos + W.size].reshape(W.shape).copy()
            pos += W.size
            self.biases[k] = theta[pos: pos + b.size].copy()
            pos += b.size

    def copy(self) -> "MlpModel":
        return MlpModel([W.copy() for W in self.weights], [b.copy() for b in self.biases],
                        self.embedding, self.system)

    def __call__(self, Z):
        return forward(self, Z)

    def to_dict(self) -> dict:
        return {
            "layer_dims": self.layer_dims,
            "weights": [W.ravel().tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "embedding": self.embedding,
            "system": self.system,
        }

    @classmethod
    def from_dict(cls, d) -> "MlpModel":
        dims = d["layer_dims"]
        weights = [np.asarray(w, dtype=float).reshape(dims[k + 1], dims[k]) for k, w in enumerate(d["weights"])]
        return cls(weights, d["biases"], d.get("embedding", "interval"), d.get("system"))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "MlpModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def forward(model: MlpModel, Z) -> np.ndarray:
    """Network output for one embedding (returns a float) or a batch of rows."""
    Z = np.asarray(Z, dtype=float)
    single = Z.ndim == 1
    H = np.atleast_2d(Z)
    if H.shape[1] != model.input_dim:
        raise ContractViolation(f"input has length {H.shape[1]}, network expects {model.input_dim}")
    last = len(model.weights) - 1
    for k, (W, b) in enumerate(zip(model.weights, model.biases)):
        H = H @ W.T + b
        if k < last:
            H = np.tanh(H)
    out = H[:, 0]
    return float(out[0]) if single else out


def _forward_cache(model, Z):
    acts = [Z]
    H = Z
    last = len(model.weights) - 1
    for k, (W, b) in enumerate(zip(model.weights, model.biases)):
        H = H @ W.T + b
        if k < last:
            H = np.tanh(H)
        acts.append(H)
    return acts


def backprop(model: MlpModel, Z, dout) -> np.ndarray:
    """Flat gradient of ``sum_i dout[i] * omega(Z[i])`` w.r.t. all parameters."""
    acts = _forward_cache(model, np.atleast_2d(np.asarray(Z, dtype=float)))
    return _backward(model, acts, np.asarray(dout, dtype=float))


def _backward(model, acts, dout):
    grads = []
    delta = dout[:, None]
    for k in range(len(model.weights) - 1, -1, -1):
        grads.append((delta.T @ acts[k]).ravel())
        grads.append(delta.sum(axis=0))
        if k > 0:
            delta = (delta @ model.weights[k]) * (1.0 - acts[k] ** 2)
    # grads were collected output-first as [dW_L, db_L, ...]; reorder to layer order
    pairs = [(grads[i], grads[i + 1]) for i in range(0, len(grads), 2)][::-1]
    return np.concatenate([np.concatenate(p) for p in pairs])


def input_gradient(model: MlpModel, Z) -> np.ndarray:
    """``d omega / d z`` for every row of ``Z``."""
    acts = _forward_cache(model, np.atleast_2d(np.asarray(Z, dtype=float)))
    delta = np.ones((acts[0].shape[0], 1))
    for k in range(len(model.weights) - 1, -1, -1):
        delta = delta @ model.weights[k]
        if k > 0:
            delta = delta * (1.0 - acts[k] ** 2)
    return delta


@dataclass(frozen=True)
class TrainConfig:
    lambda_d: float = 0.1
    lambda_pi: float = 1.0
    Nd: int = 5000
    Npi: int = 5000
    epochs: int = 5000
    batch: int = 0
    lr: float = 1e-3
    seed: int = 0
    hidden: tuple = (20, 20)
    early_stop: float = 1e-6
    lr_final: Optional[float] = None

    def __post_init__(self):
        if self.lambda_d <= 0 or self.lambda_pi <= 0 or self.lr <= 0:
            raise ContractViolation("loss weights and learning rate must be positive")
        if self.Nd < 1 or self.Npi < 1 or self.epochs < 0:
            raise ContractViolation("sample counts must be positive and epochs nonnegative")


@dataclass
class TrainReport:
    final_loss: float
    loss_history: list = field(default_factory=list)
    wall_time_s: float = 0.0
    epochs_run: int = 0
    data_loss: float = float("nan")
    physics_loss: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "final_loss": self.final_loss,
            "data_loss": self.data_loss,
            "physics_loss": self.physics_loss,
            "epochs_run": self.epochs_run,
            "wall_time_s": self.wall_time_s,
            "loss_history": self.loss_history,
        }


@dataclass(frozen=True)
class PhysicsBatch:
    """Precomputed physics-term inputs: singleton and image embeddings plus xi."""

    Z_point: np.ndarray
    Z_image: np.ndarray
    xi: np.ndarray

    @classmethod
    def from_points(cls, sys, X) -> "PhysicsBatch":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        p = value.psi_points(sys, X[:, None, :])
        return cls(embed_singletons(X), dyn.set_image_embedding(sys, X), value.xi_from_psi(p))


def loss_terms(model, Zd, yd, phys: PhysicsBatch, cfg: TrainConfig, with_grad=True):
    """``(loss, data_loss, physics_loss, flat_grad or None)`` of the composite loss."""
    nd = Zd.shape[0]
    npi = phys.Z_point.shape[0]
    Z = np.vstack([Zd, phys.Z_point, phys.Z_image])
    acts = _forward_cache(model, Z)
    out = acts[-1][:, 0]
    od, o1, o2 = out[:nd], out[nd: nd + npi], out[nd + npi:]
    rd = yd - od
    rpi = o1 - o2 - phys.xi * (1.0 - o2)
    ld = float(np.mean(rd * rd))
    lpi = float(np.mean(rpi * rpi))
    total = cfg.lambda_d * ld + cfg.lambda_pi * lpi
    if not with_grad:
        return total, ld, lpi, None
    dout = np.concatenate([
        -2.0 * cfg.lambda_d * rd / nd,
        2.0 * cfg.lambda_pi * rpi / npi,
        -2.0 * cfg.lambda_pi * rpi * (1.0 - phys.xi) / npi,
    ])
    return total, ld, lpi, _backward(model, acts, dout)


def loss(model, sys, data_x, data_w, pi_points, cfg: TrainConfig) -> float:
    """Composite loss on raw states (embeds and evaluates xi internally)."""
    phys = pi_points if isinstance(pi_points, PhysicsBatch) else PhysicsBatch.from_points(sys, pi_points)
    total, _, _, _ = loss_terms(model, embed_singletons(data_x), np.asarray(data_w, dtype=float),
                                phys, cfg, with_grad=False)
    if not np.isfinite(total):
        raise TrainingAborted("loss is not finite")
    return total


def grad_params(model, sys, data_x, data_w, pi_points, cfg: TrainConfig) -> np.ndarray:
    phys = pi_points if isinstance(pi_points, PhysicsBatch) else PhysicsBatch.from_points(sys, pi_points)
    _, _, _, g = loss_terms(model, embed_singletons(data_x), np.asarray(data_w, dtype=float), phys, cfg)
    return g


class Adam:
    def __init__(self, n, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, theta, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        return theta - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def fit_network(model, Zd, yd, phys: PhysicsBatch, cfg: TrainConfig, log_every=500):
    """Adam on the composite loss; full batch unless ``cfg.batch`` is smaller."""
    start = time.perf_counter()
    theta = model.get_flat()
    opt = Adam(theta.size, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed + 1)
    nd, npi = Zd.shape[0], phys.Z_point.shape[0]
    history = []
    epochs_run = 0
    lr0, lr1 = cfg.lr, cfg.lr_final if cfg.lr_final is not None else cfg.lr
    for epoch in range(cfg.epochs):
        if cfg.epochs > 1 and lr1 != lr0:
            opt.lr = lr0 * (lr1 / lr0) ** (epoch / (cfg.epochs - 1))
        if cfg.batch and cfg.batch < max(nd, npi):
            idd = np.sort(rng.choice(nd, size=min(cfg.batch, nd), replace=False))
            idp = np.sort(rng.choice(npi, size=min(cfg.batch, npi), replace=False))
            sub = PhysicsBatch(phys.Z_point[idp], phys.Z_image[idp], phys.xi[idp])
            total, _, _, grad = loss_terms(model, Zd[idd], yd[idd], sub, cfg)
        else:
            total, _, _, grad = loss_terms(model, Zd, yd, phys, cfg)
        if not (np.isfinite(total) and np.all(np.isfinite(grad))):
            raise TrainingAborted(f"non-finite loss at epoch {epoch}")
        history.append(total)
        epochs_run = epoch + 1
        if total < cfg.early_stop:
            break
        theta = opt.step(theta, grad)
        model.set_flat(theta)
        if log_every and epoch % log_every == 0:
            logger.info("epoch %d loss %.3e", epoch, total)
    final, ld, lpi, _ = loss_terms(model, Zd, yd, phys, cfg, with_grad=False)
    if not np.isfinite(final):
        raise TrainingAborted("final loss is not finite")
    return TrainReport(final, history, time.perf_counter() - start, epochs_run, ld, lpi)


def architecture(sys, cfg: TrainConfig) -> list:
    return [sys.embedding_dim, *cfg.hidden, 1]


def default_hidden(sys) -> tuple:
    return (30, 30) if sys.n == 3 else (20, 20)


def sample_domain(sys, count, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(sys.domain_lo, sys.domain_hi, size=(count, sys.n))


def train(sys, cfg: TrainConfig, value_cfg: value.ValueConfig, data=None, pi_points=None):
    """Sample collocation points, compute targets, and fit the network.

    ``data`` may be a precomputed ``(X, w_target)`` pair and ``pi_points``
    a precomputed array; otherwise both are drawn uniformly from the
    learning domain with seeds derived from ``cfg.seed``.
    """
    if data is None:
        Xd = sample_domain(sys, cfg.Nd, cfg.seed)
        yd, _ = value.w_targets(sys, Xd, value_cfg)
    else:
        Xd, yd = data
    if pi_points is None:
        pi_points = sample_domain(sys, cfg.Npi, cfg.seed + 7919)
    model = MlpModel.initialize(architecture(sys, cfg), seed=cfg.seed,
                                embedding=sys.embedding, system=sys.name)
    phys = PhysicsBatch.from_points(sys, pi_points)
    report = fit_network(model, embed_singletons(Xd), np.asarray(yd, dtype=float), phys, cfg)
    return model, report


def omega_nn(model: MlpModel, sys, x):
    """Network evaluated on the singleton embedding ``[x; 0]``; batches allowed."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return forward(model, np.concatenate([x, np.zeros_like(x)]))
    return forward(model, embed_singletons(x))
