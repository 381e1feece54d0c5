"""Dense numerical kernel: softmax, cross-entropy, a linear feature map with
per-task classifier heads, analytic gradients and momentum SGD.

Parameters are exposed as an ordered ``dict`` of named numpy arrays
(``feature.weight``, ``feature.bias``, ``head.0.weight`` ...). Gradients use
the same names, so ``sgd_step`` can pair them up by key.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

EPS = 1e-12
ACTIVATIONS = ("identity", "tanh")


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.005
    momentum: float = 0.9
    weight_decay: float = 5e-3

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")


def softmax(logits) -> np.ndarray:
    """Row-wise softmax with max subtraction. Accepts a vector or a 2-D batch."""
    z = np.asarray(logits, dtype=float)
    if z.size == 0 or z.shape[-1] == 0:
        raise ValueError("softmax of an empty vector")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(p, target_class) -> float | np.ndarray:
    """``-log p[target]`` with p clamped at ``EPS``.

    ``p`` may be a single probability vector with an integer target or a
    batch ``(n, k)`` with an integer array of targets (returns per-sample losses).
    """
    p = np.asarray(p, dtype=float)
    target = np.asarray(target_class)
    k = p.shape[-1]
    if np.any(target < 0) or np.any(target >= k):
        raise ValueError(f"target class out of range for {k} classes: {target_class}")
    if p.ndim == 1:
        return float(-np.log(max(p[int(target)], EPS)))
    picked = p[np.arange(p.shape[0]), target]
    return -np.log(np.maximum(picked, EPS))


@dataclass
class Head:
    weight: np.ndarray  # (n_classes, feature_dim)
    bias: np.ndarray  # (n_classes,)
    classes: list[int] = field(default_factory=list)  # global class id per row

    @property
    def num_classes(self) -> int:
        return self.weight.shape[0]


@dataclass
class LinearModel:
    """Affine feature map ``Θ(x) = act(W x + b)`` followed by classifier heads.

    The logits of the model are the concatenation of every head's output, in
    registration order; ``class_order()`` maps logit positions to global
    class ids.
    """

    feature_weight: np.ndarray  # (feature_dim, input_dim)
    feature_bias: np.ndarray
    activation: str = "identity"
    feature_trainable: bool = True
    heads: list[Head] = field(default_factory=list)

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @classmethod
    def identity(cls, dim: int, activation: str = "identity", trainable: bool = True):
        return cls(np.eye(dim), np.zeros(dim), activation, trainable)

    @property
    def input_dim(self) -> int:
        return self.feature_weight.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.feature_weight.shape[0]

    @property
    def num_classes(self) -> int:
        return sum(h.num_classes for h in self.heads)

    def add_head(self, classes: int | Sequence[int], init_scale: float = 0.0, rng=None) -> int:
        """Register a head for ``classes`` (ids, or a count of fresh consecutive ids).

        Returns the head index.
        """
        if isinstance(classes, (int, np.integer)):
            start = max(self.class_order(), default=-1) + 1
            classes = list(range(start, start + int(classes)))
        classes = [int(c) for c in classes]
        if set(classes) & set(self.class_order()):
            raise ValueError("head classes overlap an existing head")
        num_classes = len(classes)
        if init_scale > 0:
            w = init_scale * rng.standard_normal((num_classes, self.feature_dim))
        else:
            w = np.zeros((num_classes, self.feature_dim))
        self.heads.append(Head(w, np.zeros(num_classes), classes))
        return len(self.heads) - 1

    def class_order(self) -> list[int]:
        """Global class id of every logit, in logit order."""
        return [c for h in self.heads for c in h.classes]

    def predict(self, x) -> np.ndarray:
        """Top-1 global class ids over the full concatenated logits."""
        return np.asarray(self.class_order())[np.argmax(self.logits(x), axis=1)]

    def head_offsets(self) -> list[int]:
        offsets = [0]
        for h in self.heads:
            offsets.append(offsets[-1] + h.num_classes)
        return offsets

    def copy(self) -> "LinearModel":
        return LinearModel(
            self.feature_weight.copy(),
            self.feature_bias.copy(),
            self.activation,
            self.feature_trainable,
            [Head(h.weight.copy(), h.bias.copy(), list(h.classes)) for h in self.heads],
        )

    def parameters(self) -> dict[str, np.ndarray]:
        """All parameters by name. The arrays are the live storage, not copies."""
        params = {"feature.weight": self.feature_weight, "feature.bias": self.feature_bias}
        for i, h in enumerate(self.heads):
            params[f"head.{i}.weight"] = h.weight
            params[f"head.{i}.bias"] = h.bias
        return params

    # ------------------------------------------------------------------ forward

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.input_dim:
            raise ValueError(
                f"input has dimension {x.shape[-1]}, feature layer expects {self.input_dim}"
            )
        return x

    def features(self, x) -> np.ndarray:
        x = self._check_input(x)
        h = x @ self.feature_weight.T + self.feature_bias
        return np.tanh(h) if self.activation == "tanh" else h

    def head_logits(self, f: np.ndarray, heads: Sequence[int] | None = None) -> np.ndarray:
        """Logits of the selected heads (all heads by default) on features ``f``."""
        if not self.heads:
            raise ValueError("model has no classifier heads")
        idx = range(len(self.heads)) if heads is None else heads
        w = np.concatenate([self.heads[i].weight for i in idx])
        b = np.concatenate([self.heads[i].bias for i in idx])
        return f @ w.T + b

    def logits(self, x, heads: Sequence[int] | None = None) -> np.ndarray:
        return self.head_logits(self.features(x), heads)


def forward(model: LinearModel, x, heads: Sequence[int] | None = None):
    """Return ``(logits over all heads, probabilities over the requested heads)``."""
    f = model.features(x)
    logits = model.head_logits(f)
    if heads is None:
        return logits, softmax(logits)
    return logits, softmax(model.head_logits(f, heads))


# --------------------------------------------------------------------- gradients


def weighted_ce(
    model: LinearModel,
    x,
    targets,
    coef,
    heads: Sequence[int] | None = None,
    train_features: bool | None = None,
    train_heads: Sequence[int] | None = None,
    features_in: bool = False,
):
    """Loss ``Σ coef_i · H(p_i, y_i)`` and its analytic gradients.

    ``targets`` index into the logits of ``heads`` (all heads when None).
    ``features_in=True`` treats ``x`` as already in feature space, which is
    what classifier alignment needs. Gradients are returned only for trained
    parameters: the feature layer when ``train_features`` (default: the
    model's own flag, never when ``features_in``) and the heads in
    ``train_heads`` (default: every head in ``heads``).
    """
    heads = list(range(len(model.heads))) if heads is None else list(heads)
    train_heads = heads if train_heads is None else list(train_heads)
    if train_features is None:
        train_features = model.feature_trainable
    if features_in:
        train_features = False
    x = np.asarray(x, dtype=float)
    targets = np.asarray(targets, dtype=int)
    coef = np.asarray(coef, dtype=float)

    if features_in:
        f = x
        pre = None
    else:
        x = model._check_input(x)
        pre = x @ model.feature_weight.T + model.feature_bias
        f = np.tanh(pre) if model.activation == "tanh" else pre

    logits = model.head_logits(f, heads)
    p = softmax(logits)
    n = len(targets)
    picked = p[np.arange(n), targets]
    loss = float(np.sum(coef * -np.log(np.maximum(picked, EPS))))

    # d loss / d logits; zero where the clamp is active
    g = p.copy()
    g[np.arange(n), targets] -= 1.0
    g *= (coef * (picked >= EPS))[:, None]

    grads: dict[str, np.ndarray] = {}
    offsets = np.cumsum([0] + [model.heads[i].num_classes for i in heads])
    for j, i in enumerate(heads):
        if i not in train_heads:
            continue
        gi = g[:, offsets[j] : offsets[j + 1]]
        grads[f"head.{i}.weight"] = gi.T @ f
        grads[f"head.{i}.bias"] = gi.sum(axis=0)

    if train_features:
        w = np.concatenate([model.heads[i].weight for i in heads])
        df = g @ w
        if model.activation == "tanh":
            df = df * (1.0 - f**2)
        grads["feature.weight"] = df.T @ x
        grads["feature.bias"] = df.sum(axis=0)
    return loss, grads


def backward_weighted_ce(
    model: LinearModel,
    x,
    targets,
    weights,
    heads: Sequence[int] | None = None,
    train_heads: Sequence[int] | None = None,
) -> dict[str, np.ndarray]:
    """Gradients of ``mean_i(w_i · H(p_i, y_i))`` over a non-empty batch."""
    weights = np.asarray(weights, dtype=float)
    if len(weights) == 0:
        raise ValueError("empty batch")
    if np.any(weights < 0):
        raise ValueError("sample weights must be non-negative")
    _, grads = weighted_ce(model, x, targets, weights / len(weights), heads, train_heads=train_heads)
    return grads


def add_grads(a: dict[str, np.ndarray], b: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    out = dict(a)
    for k, v in b.items():
        out[k] = out[k] + v if k in out else v
    return out


# --------------------------------------------------------------------- optimizer


def sgd_step(params: dict, grads: dict, velocity: dict, cfg: SgdConfig, lr: float | None = None):
    """Momentum SGD with weight decay added to the gradient, in place.

    ``v <- momentum*v + grad + wd*param``; ``param <- param - lr*v``. Only
    parameters present in ``grads`` move; weight decay skips ``*.bias``.
    Returns ``(params, velocity)``.
    """
    lr = cfg.learning_rate if lr is None else lr
    for name, g in grads.items():
        p = params[name]
        if np.shape(g) != p.shape:
            raise ValueError(f"gradient shape {np.shape(g)} does not match {name} {p.shape}")
        v = velocity.get(name)
        if v is None:
            v = np.zeros_like(p)
        elif v.shape != p.shape:
            raise ValueError(f"velocity shape {v.shape} does not match {name} {p.shape}")
        d = g + cfg.weight_decay * p if not name.endswith("bias") else g
        v = cfg.momentum * v + d
        velocity[name] = v
        p -= lr * v
    return params, velocity


# ---------------------------------------------------------------- gradient check


def numerical_gradient(loss_fn: Callable[[], float], params: dict[str, np.ndarray], h: float = 1e-5):
    """Central finite differences of ``loss_fn`` w.r.t. every entry of ``params``.

    ``loss_fn`` must read the arrays in ``params`` live; entries are perturbed
    in place and restored.
    """
    out = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = loss_fn()
            flat[i] = old - h
            down = loss_fn()
            flat[i] = old
            gflat[i] = (up - down) / (2 * h)
        out[name] = g
    return out


def max_relative_error(analytic: dict, numeric: dict, floor: float = 1e-7) -> float:
    """Largest ``|a - n| / max(|a|, |n|, floor)`` over all shared entries."""
    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
