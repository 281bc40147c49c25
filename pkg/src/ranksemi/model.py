"""Permutation-equivariant relation scorer over the persons of one image.

Architecture, for an image with N persons and feature dim D (hidden width H):

* person encoder:   e_j = relu(W_enc x_j + b_enc)                 (H)
* pairwise relation: p_jk = relu(W_rel [e_j; e_k] + b_rel), k != j (H)
* relation context:  r_j = mean_k p_jk  (zero vector when N == 1)  (H)
* classifier:        logits_j = W_cls [e_j; r_j] + b_cls           (2)
* probs = softmax(logits) rows: column 1 is the importance score.

Parameters live in one flat float64 vector ``theta`` in the fixed order
W_enc (H*D), b_enc (H), W_rel (H*2H), b_rel (H), W_cls (2*2H), b_cls (2);
checkpoints store (feature_dim, hidden, theta) as JSON. Gradients are exact
analytic derivatives computed from a recorded forward pass — there is no
autodiff dependency.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class ModelError(ValueError):
    """Invalid model construction, shape mismatch, or stale gradient tape."""


def n_params(feature_dim: int, hidden: int) -> int:
    """Length of the flat parameter vector: (D*H+H) + (2H*H+H) + (2*2H+2)."""
    d, h = feature_dim, hidden
    return (d * h + h) + (2 * h * h + h) + (2 * 2 * h + 2)


@dataclass
class RelationModel:
    """Flat-parameter relation scorer; ``version`` tracks in-place updates."""

    feature_dim: int
    hidden: int
    theta: np.ndarray
    version: int = 0

    def __post_init__(self):
        if self.feature_dim < 1 or self.hidden < 1:
            raise ModelError(f"feature_dim and hidden must be >= 1, got "
                             f"({self.feature_dim}, {self.hidden})")
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        expected = n_params(self.feature_dim, self.hidden)
        if self.theta.shape[0] != expected:
            raise ModelError(f"theta has {self.theta.shape[0]} entries, expected {expected}")

    def unpack(self):
        """Views (W_enc, b_enc, W_rel, b_rel, W_cls, b_cls) into theta."""
        d, h = self.feature_dim, self.hidden
        t = self.theta
        i = 0
        w_enc = t[i:i + h * d].reshape(h, d); i += h * d
        b_enc = t[i:i + h]; i += h
        w_rel = t[i:i + h * 2 * h].reshape(h, 2 * h); i += h * 2 * h
        b_rel = t[i:i + h]; i += h
        w_cls = t[i:i + 2 * 2 * h].reshape(2, 2 * h); i += 2 * 2 * h
        b_cls = t[i:i + 2]
        return w_enc, b_enc, w_rel, b_rel, w_cls, b_cls

    def copy(self) -> "RelationModel":
        return RelationModel(self.feature_dim, self.hidden, self.theta.copy())


def init_model(feature_dim: int, hidden: int, seed: int) -> RelationModel:
    """Seeded init: weights ~ N(0, 1/fan_in), biases zero."""
    if feature_dim < 1 or hidden < 1:
        raise ModelError(f"feature_dim and hidden must be >= 1, got ({feature_dim}, {hidden})")
    rng = np.random.default_rng(seed)
    d, h = feature_dim, hidden
    parts = [
        rng.normal(0.0, 1.0 / np.sqrt(d), size=h * d),
        np.zeros(h),
        rng.normal(0.0, 1.0 / np.sqrt(2 * h), size=h * 2 * h),
        np.zeros(h),
        rng.normal(0.0, 1.0 / np.sqrt(2 * h), size=2 * 2 * h),
        np.zeros(2),
    ]
    return RelationModel(d, h, np.concatenate(parts))


@dataclass
class ForwardTape:
    """Recorded intermediates of one forward pass, consumed by ``gradients``."""

    model: RelationModel
    model_version: int
    x: np.ndarray        # (N, D) inputs
    e_pre: np.ndarray    # (N, H) encoder pre-activation
    e: np.ndarray        # (N, H)
    p_pre: np.ndarray | None  # (N, N, H) relation pre-activation (None when N == 1)
    c: np.ndarray        # (N, 2H) classifier input [e; r]
    probs: np.ndarray    # (N, 2)


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=1, keepdims=True)


def encode_persons(model: RelationModel, x: np.ndarray) -> np.ndarray:
    """Encoder activations relu(W_enc x + b_enc) for an (N, D) feature matrix."""
    x = np.asarray(x, dtype=np.float64)
    w_enc, b_enc, *_ = model.unpack()
    return np.maximum(x @ w_enc.T + b_enc, 0.0)


def forward(model: RelationModel, x: np.ndarray, record: bool = False):
    """Class probabilities (N, 2) for the persons of one image.

    With ``record=True`` returns ``(probs, tape)`` where the tape feeds
    ``gradients``. Rows sum to 1; probabilities are finite for finite inputs.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ModelError(f"expected a (N, D) feature matrix, got shape {x.shape}")
    if x.shape[1] != model.feature_dim:
        raise ModelError(f"feature dim {x.shape[1]} != model dim {model.feature_dim}")
    n = x.shape[0]
    h = model.hidden
    w_enc, b_enc, w_rel, b_rel, w_cls, b_cls = model.unpack()

    e_pre = x @ w_enc.T + b_enc
    e = np.maximum(e_pre, 0.0)

    if n >= 2:
        a = w_rel[:, :h]   # acts on the focal person e_j
        b = w_rel[:, h:]   # acts on the partner e_k
        u = e @ a.T        # (N, H)
        v = e @ b.T        # (N, H)
        p_pre = u[:, None, :] + v[None, :, :] + b_rel
        p = np.maximum(p_pre, 0.0)
        idx = np.arange(n)
        r = (p.sum(axis=1) - p[idx, idx, :]) / (n - 1)
    else:
        p_pre = None
        r = np.zeros((1, h))

    c = np.concatenate([e, r], axis=1)
    logits = c @ w_cls.T + b_cls
    probs = _softmax_rows(logits)
    if not record:
        return probs
    tape = ForwardTape(model, model.version, x, e_pre, e, p_pre, c, probs)
    return probs, tape


def importance_probs(model: RelationModel, x: np.ndarray) -> np.ndarray:
    """Importance scores z+ (column 1 of the softmax) for one image."""
    return forward(model, x)[:, 1]


def gradients(model: RelationModel, tape: ForwardTape, dprobs: np.ndarray) -> np.ndarray:
    """Flat gradient d(loss)/d(theta) from a recorded forward pass.

    ``dprobs`` is the loss gradient with respect to the recorded output
    probabilities (same shape). The tape must come from this exact model at
    its current version — updating the model in place invalidates old tapes.
    """
    if tape.model is not model or tape.model_version != model.version:
        raise ModelError("gradient tape is stale or belongs to a different model")
    dprobs = np.asarray(dprobs, dtype=np.float64)
    if dprobs.shape != tape.probs.shape:
        raise ModelError(f"dprobs shape {dprobs.shape} != probs shape {tape.probs.shape}")

    n = tape.x.shape[0]
    h = model.hidden
    w_enc, _, w_rel, _, w_cls, _ = model.unpack()
    probs = tape.probs

    # softmax rows: dlogit = p * (dp - sum(dp * p))
    s = (dprobs * probs).sum(axis=1, keepdims=True)
    dlogits = probs * (dprobs - s)

    d_w_cls = dlogits.T @ tape.c
    d_b_cls = dlogits.sum(axis=0)
    dc = dlogits @ w_cls
    de = dc[:, :h].copy()
    dr = dc[:, h:]

    if n >= 2:
        a = w_rel[:, :h]
        b = w_rel[:, h:]
        dp = np.broadcast_to(dr[:, None, :] / (n - 1), (n, n, h)).copy()
        idx = np.arange(n)
        dp[idx, idx, :] = 0.0          # the (j, j) pair is excluded from r_j
        dp_pre = dp * (tape.p_pre > 0)
        du = dp_pre.sum(axis=1)
        dv = dp_pre.sum(axis=0)
        d_b_rel = dp_pre.sum(axis=(0, 1))
        d_w_rel = np.concatenate([du.T @ tape.e, dv.T @ tape.e], axis=1)
        de += du @ a + dv @ b
    else:
        d_w_rel = np.zeros((h, 2 * h))
        d_b_rel = np.zeros(h)

    de_pre = de * (tape.e_pre > 0)
    d_w_enc = de_pre.T @ tape.x
    d_b_enc = de_pre.sum(axis=0)

    return np.concatenate([
        d_w_enc.ravel(), d_b_enc,
        d_w_rel.ravel(), d_b_rel,
        d_w_cls.ravel(), d_b_cls,
    ])


@dataclass
class OptimizerState:
    """SGD-with-momentum state; weight decay is coupled into the velocity."""

    velocity: np.ndarray
    momentum: float = 0.9
    weight_decay: float = 0.0005

    def __post_init__(self):
        self.velocity = np.asarray(self.velocity, dtype=np.float64).reshape(-1)
        if not (0.0 <= self.momentum < 1.0):
            raise ModelError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0.0:
            raise ModelError(f"weight_decay must be >= 0, got {self.weight_decay}")


def init_optimizer(model: RelationModel, momentum: float = 0.9,
                   weight_decay: float = 0.0005) -> OptimizerState:
    return OptimizerState(np.zeros_like(model.theta), momentum, weight_decay)


def sgd_step(model: RelationModel, state: OptimizerState, grad: np.ndarray,
             lr: float) -> tuple[RelationModel, OptimizerState]:
    """In-place update: v <- m*v + g + wd*theta; theta <- theta - lr*v."""
    grad = np.asarray(grad, dtype=np.float64).reshape(-1)
    if grad.shape != model.theta.shape:
        raise ModelError(f"gradient length {grad.shape[0]} != parameter length "
                         f"{model.theta.shape[0]}")
    if not np.all(np.isfinite(grad)):
        raise ModelError("gradient contains non-finite entries")
    if state.velocity.shape != model.theta.shape:
        raise ModelError("optimizer state does not match this model")
    if lr <= 0.0:
        raise ModelError(f"learning rate must be > 0, got {lr}")
    state.velocity *= state.momentum
    state.velocity += grad
    state.velocity += state.weight_decay * model.theta
    model.theta -= lr * state.velocity
    model.version += 1
    return model, state


def save_model(model: RelationModel, path) -> None:
    """Write a JSON checkpoint (feature_dim, hidden, theta in packing order)."""
    payload = {
        "feature_dim": model.feature_dim,
        "hidden": model.hidden,
        "theta": [float(x) for x in model.theta],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_model(path) -> RelationModel:
    """Read a JSON checkpoint written by ``save_model`` (exact round-trip)."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelError(f"{path}: invalid checkpoint ({exc.msg})") from exc
    for key in ("feature_dim", "hidden", "theta"):
        if key not in payload:
            raise ModelError(f"{path}: checkpoint missing key {key!r}")
    return RelationModel(int(payload["feature_dim"]), int(payload["hidden"]),
                         np.array(payload["theta"], dtype=np.float64))
