"""From-scratch multinomial (softmax) logistic regression.

Used both as the 3-way segment classifier head over pooled embeddings and,
with two classes, as the binary stacking meta-classifier. Training is
full-batch gradient descent with backtracking line search on the
L2-regularised mean cross-entropy; initialisation is fixed at zero (the
problem is convex, so the optimum does not depend on it) and the whole
procedure is deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CLASS_ORDER = ("TBpos", "OR", "HC")


class ClassifierError(Exception):
    pass


@dataclass(frozen=True)
class OptimizerSettings:
    tol: float = 1e-6        # stop when gradient infinity-norm drops below
    max_iters: int = 10000
    armijo_c: float = 1e-4
    backtrack: float = 0.5


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray  # zero stds replaced by 1

    @classmethod
    def fit(cls, features: np.ndarray) -> "Standardizer":
        mean = features.mean(axis=0)
        std = features.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        return cls(mean=mean, std=std)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std


@dataclass
class SoftmaxModel:
    weights: np.ndarray          # (C, D)
    bias: np.ndarray             # (C,)
    classes: tuple[str, ...]
    l2_strength: float
    standardizer: Standardizer
    provider_id: str = ""
    duration_s: float | None = None


@dataclass(frozen=True)
class SegmentScores:
    segment_id: str
    logits: np.ndarray  # (C,)
    probs: np.ndarray   # (C,) softmax of logits


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def loss_and_grad(W: np.ndarray, b: np.ndarray, X: np.ndarray, Y: np.ndarray,
                  l2: float) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy + (l2/2)||W||^2 and its gradient.

    Y is one-hot (N, C); the bias is unregularised.
    """
    n = X.shape[0]
    Z = X @ W.T + b
    P = softmax(Z)
    # cross-entropy via log-sum-exp for stability
    zmax = Z.max(axis=1)
    lse = zmax + np.log(np.exp(Z - zmax[:, None]).sum(axis=1))
    ll = (Z * Y).sum(axis=1) - lse
    loss = -ll.mean() + 0.5 * l2 * float((W * W).sum())
    R = (P - Y) / n
    gW = R.T @ X + l2 * W
    gb = R.sum(axis=0)
    return float(loss), gW, gb


def train(features: np.ndarray, labels: np.ndarray, l2_strength: float,
          opt: OptimizerSettings = OptimizerSettings(),
          classes: tuple[str, ...] = CLASS_ORDER, **meta) -> SoftmaxModel:
    """Fit softmax LR by full-batch GD with backtracking line search.

    Features are standardised with training-set statistics; the fitted
    standardizer is stored in the model. Labels are class indices into
    `classes`.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if not np.isfinite(X).all():
        raise ClassifierError("non-finite feature values")
    C = len(classes)
    present = np.unique(y)
    missing = sorted(set(range(C)) - set(present.tolist()))
    if missing:
        raise ClassifierError(f"classes absent from training labels: {missing}")

    std = Standardizer.fit(X)
    Xs = std.apply(X)
    n, d = Xs.shape
    Y = np.zeros((n, C))
    Y[np.arange(n), y] = 1.0

    W = np.zeros((C, d))
    b = np.zeros(C)
    loss, gW, gb = loss_and_grad(W, b, Xs, Y, l2_strength)
    step = 1.0
    for _ in range(opt.max_iters):
        gnorm = max(np.abs(gW).max(), np.abs(gb).max())
        if gnorm < opt.tol:
            break
        gsq = float((gW * gW).sum() + (gb * gb).sum())
        # backtracking line search with Armijo sufficient decrease
        t = step
        while True:
            W2, b2 = W - t * gW, b - t * gb
            loss2, gW2, gb2 = loss_and_grad(W2, b2, Xs, Y, l2_strength)
            if loss2 <= loss - opt.armijo_c * t * gsq or t < 1e-16:
                break
            t *= opt.backtrack
        W, b, loss, gW, gb = W2, b2, loss2, gW2, gb2
        step = min(t / opt.backtrack, 1e6)  # allow the step to grow back
    return SoftmaxModel(weights=W, bias=b, classes=tuple(classes),
                        l2_strength=l2_strength, standardizer=std, **meta)


def predict(model: SoftmaxModel, feature: np.ndarray, segment_id: str = "") -> SegmentScores:
    x = np.asarray(feature, dtype=np.float64)
    if x.shape[-1] != model.weights.shape[1]:
        raise ClassifierError(
            f"feature dim {x.shape[-1]} does not match model dim {model.weights.shape[1]}")
    z = model.weights @ model.standardizer.apply(x) + model.bias
    return SegmentScores(segment_id=segment_id, logits=z, probs=softmax(z))


def predict_batch(model: SoftmaxModel, features: np.ndarray) -> np.ndarray:
    """(N, C) probabilities."""
    Xs = model.standardizer.apply(np.asarray(features, dtype=np.float64))
    return softmax(Xs @ model.weights.T + model.bias)


DEFAULT_C_GRID = tuple(np.logspace(-6, 2, 10))
DEFAULT_TOL_GRID = (1e-6, 1e-5, 1e-4)


def grid_search(train_features: np.ndarray, train_labels: np.ndarray,
                valid_features: np.ndarray, valid_labels: np.ndarray,
                c_grid=DEFAULT_C_GRID, tol_grid=DEFAULT_TOL_GRID,
                classes: tuple[str, ...] = CLASS_ORDER,
                positive_class: int = 0) -> tuple[SoftmaxModel, list[dict]]:
    """Train over the (regularisation, tolerance) grid, select by validation
    AUROC of positive class vs rest; ties break toward larger l2."""
    from .evaluation import auroc

    if len(valid_labels) == 0:
        raise ClassifierError("empty validation fold")
    report = []
    best = None
    for c in c_grid:
        lam = 1.0 / c
        for tol in tol_grid:
            model = train(train_features, train_labels, lam,
                          OptimizerSettings(tol=tol), classes=classes)
            probs = predict_batch(model, valid_features)
            pairs = [(p[positive_class], int(l == positive_class))
                     for p, l in zip(probs, valid_labels)]
            score = auroc(pairs)
            report.append({"C": float(c), "l2": lam, "tol": tol, "auroc": score})
            key = (score, lam)
            if best is None or key > best[0]:
                best = (key, model)
    return best[1], report


def to_json(model: SoftmaxModel) -> str:
    return json.dumps({
        "weights": model.weights.tolist(),
        "bias": model.bias.tolist(),
        "classes": list(model.classes),
        "l2_strength": model.l2_strength,
        "standardizer": {"mean": model.standardizer.mean.tolist(),
                         "std": model.standardizer.std.tolist()},
        "provider_id": model.provider_id,
        "duration_s": model.duration_s,
    })


def from_json(doc: str) -> SoftmaxModel:
    d = json.loads(doc)
    return SoftmaxModel(
        weights=np.array(d["weights"], dtype=np.float64),
        bias=np.array(d["bias"], dtype=np.float64),
        classes=tuple(d["classes"]),
        l2_strength=d["l2_strength"],
        standardizer=Standardizer(mean=np.array(d["standardizer"]["mean"]),
                                  std=np.array(d["standardizer"]["std"])),
        provider_id=d.get("provider_id", ""),
        duration_s=d.get("duration_s"),
    )
