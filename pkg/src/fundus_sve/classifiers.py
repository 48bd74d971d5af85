"""Meta-learners over feature tables: KNN, MLP, logistic regression, LDA.

All four share the sklearn estimator surface (fit / predict /
predict_proba / get_params) plus JSON save/load with bit-stable reload.
Training is deterministic under the seed; the gradient-based trainers
use full-batch descent with per-step halving, so the recorded loss
trace is non-increasing.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .features import FeatureTable
from .validation import check_feature_matrix

MODEL_FORMAT_VERSION = 1


class ModelError(Exception):
    pass


class ModelFormatError(ModelError):
    pass


@dataclass(frozen=True)
class ClassifierSpec:
    kind: str  # knn | mlp | logreg | lda
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("knn", "mlp", "logreg", "lda"):
            raise ValueError(f"unknown classifier kind {self.kind!r}")


def _check_training_table(X, y, n_classes):
    X = check_feature_matrix(X)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y disagree in length")
    if X.shape[0] == 0 or X.shape[1] == 0:
        raise ValueError("empty training data")
    if n_classes is None:
        n_classes = int(y.max()) + 1
    if y.min() < 0 or y.max() >= n_classes:
        raise ValueError(f"labels outside 0..{n_classes - 1}")
    return X, y, n_classes


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def predict_labels(scores) -> np.ndarray:
    """Argmax per row, lowest class index on exact ties."""
    scores = np.asarray(scores, dtype=np.float64)
    return scores.argmax(axis=1)


class KnnClassifier(BaseEstimator):
    """K nearest neighbors by Euclidean distance.

    Neighbor distance ties break toward the lower training index; vote
    ties break by smaller summed distance, then lower class index.
    """

    def __init__(self, k=5, n_classes=None):
        self.k = k
        self.n_classes = n_classes

    def fit(self, X, y):
        X, y, n_classes = _check_training_table(X, y, self.n_classes)
        if self.k < 1:
            raise ValueError("k must be >= 1")
        self.X_ = X
        self.y_ = y
        self.n_classes_ = n_classes
        self.dim_ = X.shape[1]
        return self

    def _neighbors(self, X):
        X = check_feature_matrix(X)
        if X.shape[1] != self.dim_:
            raise ValueError(f"dimension mismatch: {X.shape[1]} vs {self.dim_}")
        d2 = ((X[:, None, :] - self.X_[None, :, :]) ** 2).sum(axis=2)
        dist = np.sqrt(d2)
        train_idx = np.arange(len(self.y_))
        # sort by (distance, train index): deterministic at distance ties
        order = np.lexsort((np.broadcast_to(train_idx, dist.shape), dist), axis=1)
        k = min(self.k, len(self.y_))
        return dist, order[:, :k]

    def predict_proba(self, X):
        _, nearest = self._neighbors(X)
        k = nearest.shape[1]
        votes = np.zeros((X.shape[0], self.n_classes_))
        for c in range(self.n_classes_):
            votes[:, c] = (self.y_[nearest] == c).sum(axis=1)
        return votes / k

    def predict(self, X):
        dist, nearest = self._neighbors(X)
        labels = np.empty(X.shape[0], dtype=np.int64)
        for i in range(X.shape[0]):
            neighbor_labels = self.y_[nearest[i]]
            neighbor_dists = dist[i, nearest[i]]
            counts = np.bincount(neighbor_labels, minlength=self.n_classes_)
            best = counts.max()
            tied = np.flatnonzero(counts == best)
            if len(tied) == 1:
                labels[i] = tied[0]
            else:
                sums = [neighbor_dists[neighbor_labels == c].sum() for c in tied]
                labels[i] = tied[int(np.lexsort((tied, np.asarray(sums)))[0])]
        return labels


def _descend(params, loss_grad, lr, epochs, plateau_delta=1e-7, plateau_epochs=20):
    """Full-batch gradient descent with per-step halving.

    A step that would increase the loss is retried with a halved rate
    (deterministically), keeping the recorded trace non-increasing.
    """
    loss, grads = loss_grad(params)
    trace = [loss]
    flat_epochs = 0
    for _ in range(epochs):
        step = lr
        for _ in range(40):
            candidate = [p - step * g for p, g in zip(params, grads)]
            new_loss, new_grads = loss_grad(candidate)
            if new_loss <= loss + 1e-12:
                break
            step /= 2.0
        else:
            break
        params, loss, grads = candidate, new_loss, new_grads
        if trace[-1] - loss < plateau_delta:
            flat_epochs += 1
            if flat_epochs >= plateau_epochs:
                trace.append(loss)
                break
        else:
            flat_epochs = 0
        trace.append(loss)
    return params, trace


class LogRegClassifier(BaseEstimator):
    """Multinomial logistic regression, cross-entropy + L2 penalty."""

    def __init__(self, lr=0.01, epochs=500, l2=1e-4, seed=0, n_classes=None):
        self.lr = lr
        self.epochs = epochs
        self.l2 = l2
        self.seed = seed
        self.n_classes = n_classes

    @staticmethod
    def _loss_grad(X, y_onehot, l2):
        n = X.shape[0]

        def fn(params):
            W, b = params
            probs = _softmax(X @ W + b)
            loss = -np.log(np.clip((probs * y_onehot).sum(axis=1), 1e-300, None)).mean()
            loss += 0.5 * l2 * (W ** 2).sum()
            delta = (probs - y_onehot) / n
            return loss, [X.T @ delta + l2 * W, delta.sum(axis=0)]

        return fn

    def fit(self, X, y):
        X, y, n_classes = _check_training_table(X, y, self.n_classes)
        onehot = np.eye(n_classes)[y]
        params = [np.zeros((X.shape[1], n_classes)), np.zeros(n_classes)]
        params, trace = _descend(params, self._loss_grad(X, onehot, self.l2),
                                 self.lr, self.epochs)
        self.W_, self.b_ = params
        self.loss_trace_ = trace
        self.n_classes_ = n_classes
        self.dim_ = X.shape[1]
        return self

    def predict_proba(self, X):
        X = check_feature_matrix(X)
        if X.shape[1] != self.dim_:
            raise ValueError(f"dimension mismatch: {X.shape[1]} vs {self.dim_}")
        return _softmax(X @ self.W_ + self.b_)

    def predict(self, X):
        return predict_labels(self.predict_proba(X))


class MlpClassifier(BaseEstimator):
    """One ReLU hidden layer, softmax output, cross-entropy loss.

    Weights start from a seeded symmetric uniform scaled by 1/sqrt(fan_in).
    """

    def __init__(self, hidden=256, lr=0.01, epochs=500, seed=0, n_classes=None):
        self.hidden = hidden
        self.lr = lr
        self.epochs = epochs
        self.seed = seed
        self.n_classes = n_classes

    @staticmethod
    def _loss_grad(X, y_onehot):
        n = X.shape[0]

        def fn(params):
            W1, b1, W2, b2 = params
            pre = X @ W1 + b1
            hidden = np.maximum(pre, 0.0)
            probs = _softmax(hidden @ W2 + b2)
            loss = -np.log(np.clip((probs * y_onehot).sum(axis=1), 1e-300, None)).mean()
            delta = (probs - y_onehot) / n
            d_hidden = delta @ W2.T
            d_hidden[pre <= 0] = 0.0
            return loss, [X.T @ d_hidden, d_hidden.sum(axis=0),
                          hidden.T @ delta, delta.sum(axis=0)]

        return fn

    def _init_params(self, dim, n_classes):
        rng = np.random.default_rng(self.seed)
        lim1 = 1.0 / np.sqrt(dim)
        lim2 = 1.0 / np.sqrt(self.hidden)
        return [rng.uniform(-lim1, lim1, (dim, self.hidden)), np.zeros(self.hidden),
                rng.uniform(-lim2, lim2, (self.hidden, n_classes)), np.zeros(n_classes)]

    def fit(self, X, y):
        X, y, n_classes = _check_training_table(X, y, self.n_classes)
        if self.hidden < 1:
            raise ValueError("hidden must be >= 1")
        onehot = np.eye(n_classes)[y]
        params = self._init_params(X.shape[1], n_classes)
        params, trace = _descend(params, self._loss_grad(X, onehot),
                                 self.lr, self.epochs)
        self.W1_, self.b1_, self.W2_, self.b2_ = params
        self.loss_trace_ = trace
        self.n_classes_ = n_classes
        self.dim_ = X.shape[1]
        return self

    def predict_proba(self, X):
        X = check_feature_matrix(X)
        if X.shape[1] != self.dim_:
            raise ValueError(f"dimension mismatch: {X.shape[1]} vs {self.dim_}")
        hidden = np.maximum(X @ self.W1_ + self.b1_, 0.0)
        return _softmax(hidden @ self.W2_ + self.b2_)

    def predict(self, X):
        return predict_labels(self.predict_proba(X))


class LdaClassifier(BaseEstimator):
    """Linear discriminant analysis: class means, pooled ridge covariance,
    Gaussian posterior with empirical priors."""

    def __init__(self, ridge=1e-6, n_classes=None):
        self.ridge = ridge
        self.n_classes = n_classes

    def fit(self, X, y):
        X, y, n_classes = _check_training_table(X, y, self.n_classes)
        present = np.unique(y)
        dim = X.shape[1]
        means = np.zeros((n_classes, dim))
        priors = np.zeros(n_classes)
        pooled = np.zeros((dim, dim))
        for c in present:
            Xc = X[y == c]
            means[c] = Xc.mean(axis=0)
            priors[c] = len(Xc) / len(X)
            centered = Xc - means[c]
            pooled += centered.T @ centered
        denom = max(len(X) - len(present), 1)
        pooled = pooled / denom + self.ridge * np.eye(dim)
        try:
            inv = np.linalg.inv(pooled)
        except np.linalg.LinAlgError:
            raise ModelError("pooled covariance singular even after ridge") from None
        self.means_ = means
        self.priors_ = priors
        self.cov_inv_ = inv
        self.n_classes_ = n_classes
        self.dim_ = dim
        self.present_ = present
        return self

    def predict_proba(self, X):
        X = check_feature_matrix(X)
        if X.shape[1] != self.dim_:
            raise ValueError(f"dimension mismatch: {X.shape[1]} vs {self.dim_}")
        # shared-covariance discriminants; absent classes get -inf
        disc = np.full((X.shape[0], self.n_classes_), -np.inf)
        for c in self.present_:
            mu = self.means_[c]
            disc[:, c] = (X @ self.cov_inv_ @ mu - 0.5 * mu @ self.cov_inv_ @ mu
                          + np.log(self.priors_[c]))
        return _softmax(np.where(np.isneginf(disc), -1e300, disc))

    def predict(self, X):
        return predict_labels(self.predict_proba(X))


_KINDS = {
    "knn": KnnClassifier,
    "mlp": MlpClassifier,
    "logreg": LogRegClassifier,
    "lda": LdaClassifier,
}


def make_classifier(spec: ClassifierSpec):
    cls = _KINDS[spec.kind]
    kwargs = dict(spec.params)
    if spec.kind in ("mlp", "logreg"):
        kwargs.setdefault("seed", spec.seed)
    return cls(**kwargs)


def fit(spec: ClassifierSpec, table: FeatureTable):
    """Train a classifier of the given spec on a feature table."""
    model = make_classifier(spec)
    model.fit(table.X, table.labels)
    model.spec_ = spec
    return model


def predict_scores(model, table: FeatureTable) -> np.ndarray:
    """Row-stochastic per-class scores for every table row."""
    return model.predict_proba(table.X)


def gradient_check(spec: ClassifierSpec, X, y, h: float = 1e-5) -> float:
    """Max relative error of analytic vs central-difference gradients."""
    X, y, n_classes = _check_training_table(X, y, None)
    onehot = np.eye(n_classes)[y]
    if spec.kind == "logreg":
        model = make_classifier(spec)
        loss_grad = LogRegClassifier._loss_grad(X, onehot, model.l2)
        rng = np.random.default_rng(spec.seed)
        params = [rng.normal(0, 0.5, (X.shape[1], n_classes)),
                  rng.normal(0, 0.5, n_classes)]
    elif spec.kind == "mlp":
        model = make_classifier(spec)
        loss_grad = MlpClassifier._loss_grad(X, onehot)
        params = model._init_params(X.shape[1], n_classes)
    else:
        raise ValueError("gradient_check applies to mlp and logreg only")

    _, analytic = loss_grad(params)
    max_rel = 0.0
    for pi, p in enumerate(params):
        flat = p.ravel()
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            plus, _ = loss_grad(params)
            flat[j] = orig - h
            minus, _ = loss_grad(params)
            flat[j] = orig
            numeric = (plus - minus) / (2 * h)
            a = analytic[pi].ravel()[j]
            denom = max(abs(a) + abs(numeric), 1e-8)
            max_rel = max(max_rel, abs(a - numeric) / denom)
    return max_rel


def save_model(model, path) -> None:
    """Versioned JSON dump; reload scores bit-identically."""
    spec = getattr(model, "spec_", None)
    kind = next(k for k, cls in _KINDS.items() if isinstance(model, cls))
    payload = {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": kind,
        "params": model.get_params(),
        "seed": getattr(model, "seed", None),
        "n_classes": model.n_classes_,
        "dim": model.dim_,
        "spec": None if spec is None else
            {"kind": spec.kind, "params": spec.params, "seed": spec.seed},
        "state": {},
        "metadata": {"loss_trace": [float(v) for v in getattr(model, "loss_trace_", [])]},
    }
    state = payload["state"]
    if kind == "knn":
        state["X"] = model.X_.tolist()
        state["y"] = model.y_.tolist()
    elif kind == "logreg":
        state["W"] = model.W_.tolist()
        state["b"] = model.b_.tolist()
    elif kind == "mlp":
        state["W1"] = model.W1_.tolist()
        state["b1"] = model.b1_.tolist()
        state["W2"] = model.W2_.tolist()
        state["b2"] = model.b2_.tolist()
    else:
        state["means"] = model.means_.tolist()
        state["priors"] = model.priors_.tolist()
        state["cov_inv"] = model.cov_inv_.tolist()
        state["present"] = model.present_.tolist()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True))


def load_model(path):
    path = Path(path)
    if not path.is_file():
        raise ModelError(f"no such model file: {path}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"corrupt model file {path}: {exc}") from None
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise ModelFormatError(f"corrupt model file {path}: missing format_version")
    if payload["format_version"] != MODEL_FORMAT_VERSION:
        raise ModelFormatError(
            f"model format version {payload['format_version']} unsupported "
            f"(expected {MODEL_FORMAT_VERSION})")
    try:
        kind = payload["kind"]
        model = _KINDS[kind](**payload["params"])
        state = payload["state"]
        model.n_classes_ = payload["n_classes"]
        model.dim_ = payload["dim"]
        if payload.get("spec"):
            model.spec_ = ClassifierSpec(**payload["spec"])
        model.loss_trace_ = payload["metadata"].get("loss_trace", [])
        if kind == "knn":
            model.X_ = np.array(state["X"], dtype=np.float64).reshape(-1, model.dim_)
            model.y_ = np.array(state["y"], dtype=np.int64)
        elif kind == "logreg":
            model.W_ = np.array(state["W"], dtype=np.float64)
            model.b_ = np.array(state["b"], dtype=np.float64)
        elif kind == "mlp":
            model.W1_ = np.array(state["W1"], dtype=np.float64)
            model.b1_ = np.array(state["b1"], dtype=np.float64)
            model.W2_ = np.array(state["W2"], dtype=np.float64)
            model.b2_ = np.array(state["b2"], dtype=np.float64)
        else:
            model.means_ = np.array(state["means"], dtype=np.float64)
            model.priors_ = np.array(state["priors"], dtype=np.float64)
            model.cov_inv_ = np.array(state["cov_inv"], dtype=np.float64)
            model.present_ = np.array(state["present"], dtype=np.int64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"corrupt model file {path}: {exc}") from None
    return model
