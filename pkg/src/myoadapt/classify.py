"""Gesture classifiers.

RLSC solves ``W = (X^T X + lam I)^{-1} X^T Y`` against one-hot targets and
predicts ``argmax(W^T x)``. :class:`IncrementalRLSC` keeps the upper Cholesky
factor of ``X^T X + lam I`` and refreshes it with one Givens sweep per sample,
so after any sequence of updates it holds the same weights as a batch fit on
everything seen so far.
"""

import warnings
from collections import Counter, deque

import numba
import numpy as np
from scipy import linalg

from .errors import InvalidSpecError, NumericalError
from .features import map_from_descriptor

N_CLASSES = 7
GESTURES = ("Rest", "HC", "HO", "WP", "WS", "WF", "WE")

MODEL_FORMAT = "myoadapt-model"
MODEL_VERSION = 1


def one_hot(y, n_classes=N_CLASSES):
    y = np.asarray(y)
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise InvalidSpecError(f"labels must lie in [0, {n_classes - 1}]")
    Y = np.zeros((y.shape[0], n_classes))
    Y[np.arange(y.shape[0]), y.astype(int)] = 1.0
    return Y


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalError("inputs contain NaN or inf")


def rlsc_weights(X, Y, lam):
    """Closed-form ridge weights via a Cholesky solve (no explicit inverse)."""
    if not lam > 0:
        raise InvalidSpecError(f"lambda must be positive, got {lam}")
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    _check_finite(X, Y)
    G = X.T @ X
    G[np.diag_indices_from(G)] += lam
    return linalg.cho_solve(linalg.cho_factor(G, lower=False), X.T @ Y)


def predict(W, X):
    """Argmax of the class scores; ties resolve to the lowest class id."""
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != W.shape[0]:
        raise InvalidSpecError(f"expected dim {W.shape[0]}, got {X.shape[-1]}")
    return np.argmax(X @ W, axis=-1)


@numba.njit(cache=True)
def _cholupdate(R, x):
    # In place: R^T R + x x^T. R upper triangular, x is consumed.
    d = x.shape[0]
    for k in range(d):
        xk = x[k]
        if xk == 0.0:
            continue
        rkk = R[k, k]
        r = np.sqrt(rkk * rkk + xk * xk)
        c = r / rkk
        s = xk / rkk
        R[k, k] = r
        for j in range(k + 1, d):
            R[k, j] = (R[k, j] + s * x[j]) / c
            x[j] = c * x[j] - s * R[k, j]


def cholupdate(R, x):
    """Return the upper factor of ``R^T R + x x^T`` (inputs untouched)."""
    R = np.array(R, dtype=float, order="C")
    _cholupdate(R, np.array(x, dtype=float))
    return R


class _MappedMixin:
    feature_map = None

    def _features(self, X):
        X = np.asarray(X, dtype=float)
        return self.feature_map.transform(X) if self.feature_map is not None else X


class RLSC(_MappedMixin):
    """Batch RLSC, optionally on top of a random feature map."""

    incremental = False

    def __init__(self, lam=1.0, n_classes=N_CLASSES, feature_map=None):
        if not lam > 0:
            raise InvalidSpecError(f"lambda must be positive, got {lam}")
        self.lam = float(lam)
        self.n_classes = n_classes
        self.feature_map = feature_map
        self.W = None

    def fit(self, X, y):
        self.W = rlsc_weights(self._features(X), one_hot(y, self.n_classes), self.lam)
        return self

    def decision_function(self, X):
        return self._features(X) @ self.W

    def predict(self, X):
        return predict(self.W, self._features(X))


def train_batch_rlsc(X, y, lam, n_classes=N_CLASSES):
    return RLSC(lam, n_classes).fit(X, y)


class IncrementalRLSC(_MappedMixin):
    """Exact incremental RLSC state ``(R, b, W)``.

    ``R`` is upper triangular with ``R^T R = lam I + sum_k x_k x_k^T`` and
    ``b = sum_k x_k e_{y_k}^T``. :meth:`update` refreshes ``W`` after every
    sample; :meth:`partial_fit` applies a block of rank-one updates and solves
    for ``W`` once at the end. State is swapped in only after an update fully
    succeeds.
    """

    incremental = True

    def __init__(self, lam=1.0, n_classes=N_CLASSES, feature_map=None, n_inputs=None):
        if not lam > 0:
            raise InvalidSpecError(f"lambda must be positive, got {lam}")
        self.lam = float(lam)
        self.n_classes = n_classes
        self.feature_map = feature_map
        self.R = self.b = self.W = None
        self.n_seen = 0
        d = feature_map.n_features if feature_map is not None else n_inputs
        if d is not None:
            self._init_state(d)

    def _init_state(self, d):
        self.R = np.sqrt(self.lam) * np.eye(d)
        self.b = np.zeros((d, self.n_classes))
        self.W = np.zeros((d, self.n_classes))
        self.n_seen = 0

    @property
    def dim(self):
        return None if self.R is None else self.R.shape[0]

    def _solve(self, R, b):
        z = linalg.solve_triangular(R, b, trans="T", lower=False)
        return linalg.solve_triangular(R, z, lower=False)

    def fit(self, X, y):
        """Reset, then absorb ``(X, y)`` with one factorization of the Gram matrix."""
        Z = self._features(X)
        _check_finite(Z)
        Y = one_hot(y, self.n_classes)
        G = Z.T @ Z
        G[np.diag_indices_from(G)] += self.lam
        self.R = linalg.cholesky(G, lower=False)
        self.b = Z.T @ Y
        self.W = self._solve(self.R, self.b)
        self.n_seen = Z.shape[0]
        return self

    def update(self, x, y):
        z = self._features(x)
        if z.ndim != 1:
            raise InvalidSpecError("update takes a single sample; use partial_fit")
        return self.partial_fit(z[None, :], [y], _mapped=True)

    def partial_fit(self, X, y, defer=True, _mapped=False):
        Z = np.atleast_2d(X if _mapped else self._features(X))
        _check_finite(Z)
        Y = one_hot(np.atleast_1d(y), self.n_classes)
        if self.R is None:
            self._init_state(Z.shape[1])
        if Z.shape[1] != self.dim:
            raise InvalidSpecError(f"expected dim {self.dim}, got {Z.shape[1]}")
        R = np.array(self.R, order="C")
        b = self.b.copy()
        W = self.W
        for z, yrow in zip(Z, Y):
            _cholupdate(R, z.copy())
            b += np.outer(z, yrow)
            if not defer:
                W = self._solve(R, b)
        if defer and Z.shape[0]:
            W = self._solve(R, b)
        self.R, self.b, self.W = R, b, W
        self.n_seen += Z.shape[0]
        return self

    def decision_function(self, X):
        return self._features(X) @ self.W

    def predict(self, X):
        return predict(self.W, self._features(X))

    def gram(self):
        return self.R.T @ self.R


def init_incremental(d, c, lam):
    return IncrementalRLSC(lam, n_classes=c, n_inputs=d)


def update_incremental(state, x, y):
    return state.update(x, y)


class KNN:
    """Brute-force Euclidean k-nearest-neighbour vote."""

    incremental = False

    def __init__(self, k=1, n_classes=N_CLASSES):
        if k < 1:
            raise InvalidSpecError("k must be >= 1")
        self.k = int(k)
        self.n_classes = n_classes

    def fit(self, X, y):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=int)
        self._sqnorm = (self.X * self.X).sum(1)
        return self

    def predict(self, X, chunk=1024):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        k = min(self.k, self.X.shape[0])
        out = np.empty(X.shape[0], dtype=int)
        for start in range(0, X.shape[0], chunk):
            Q = X[start:start + chunk]
            dist = self._sqnorm[None, :] - 2.0 * Q @ self.X.T
            if k < dist.shape[1]:
                idx = np.argpartition(dist, k - 1, axis=1)[:, :k]
            else:
                idx = np.broadcast_to(np.arange(dist.shape[1]), dist.shape)
            votes = np.zeros((Q.shape[0], self.n_classes), dtype=int)
            np.add.at(votes, (np.arange(Q.shape[0])[:, None], self.y[idx]), 1)
            out[start:start + chunk] = votes.argmax(1)
        return out


class LDA:
    """Linear discriminant analysis with a pooled, jittered covariance."""

    incremental = False

    def __init__(self, n_classes=N_CLASSES, jitter=1e-6):
        self.n_classes = n_classes
        self.jitter = jitter

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=int)
        _check_finite(X)
        d = X.shape[1]
        means = np.zeros((self.n_classes, d))
        counts = np.bincount(y, minlength=self.n_classes)
        centered = np.empty_like(X)
        for c in range(self.n_classes):
            mask = y == c
            if counts[c]:
                means[c] = X[mask].mean(0)
                centered[mask] = X[mask] - means[c]
        dof = max(X.shape[0] - int((counts > 0).sum()), 1)
        cov = centered.T @ centered / dof
        if np.linalg.matrix_rank(cov) < d:
            warnings.warn("within-class covariance is singular; relying on jitter",
                          RuntimeWarning, stacklevel=2)
        scale = np.trace(cov) / d
        cov[np.diag_indices(d)] += self.jitter * (scale if scale > 0 else 1.0)
        coef = linalg.cho_solve(linalg.cho_factor(cov), means.T)  # (d, c)
        with np.errstate(divide="ignore"):
            log_prior = np.log(counts / counts.sum())
        self.coef = coef
        self.intercept = -0.5 * np.einsum("cd,dc->c", means, coef) + log_prior
        self.intercept[counts == 0] = -np.inf
        self.means = means
        return self

    def decision_function(self, X):
        return np.asarray(X, dtype=float) @ self.coef + self.intercept

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=-1)


class VoteFilter:
    """Majority vote over the last ``window_len`` predictions.

    On a tie the previously emitted label is kept if it is among the tied
    labels; otherwise the lowest tied id wins.
    """

    def __init__(self, window_len=5):
        if window_len < 1:
            raise InvalidSpecError("window_len must be >= 1")
        self.window_len = int(window_len)
        self.reset()

    def reset(self):
        self.buffer = deque(maxlen=self.window_len)
        self.last = None

    def filter(self, label):
        self.buffer.append(int(label))
        counts = Counter(self.buffer)
        top = max(counts.values())
        tied = sorted(k for k, v in counts.items() if v == top)
        self.last = self.last if self.last in tied else tied[0]
        return self.last

    def filter_sequence(self, labels):
        return np.array([self.filter(l) for l in labels], dtype=int)


def majority_vote(buffer, new_label):
    return buffer.filter(new_label)


# -- persistence ------------------------------------------------------------

def save_model(path, model, method=""):
    payload = {
        "format": np.array(MODEL_FORMAT),
        "version": np.array(MODEL_VERSION),
        "method": np.array(method),
        "kind": np.array(type(model).__name__),
        "n_classes": np.array(model.n_classes),
    }
    fmap = getattr(model, "feature_map", None)
    if fmap is not None:
        for key, val in fmap.descriptor().items():
            payload["map_" + key] = np.array(val)
    if isinstance(model, (RLSC, IncrementalRLSC)):
        payload["lam"] = np.array(model.lam)
        payload["W"] = model.W
    if isinstance(model, IncrementalRLSC):
        payload.update(R=model.R, b=model.b, n_seen=np.array(model.n_seen))
    elif isinstance(model, KNN):
        payload.update(k=np.array(model.k), X=model.X, y=model.y)
    elif isinstance(model, LDA):
        payload.update(coef=model.coef, intercept=model.intercept, means=model.means,
                       jitter=np.array(model.jitter))
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_model(path):
    """Inverse of :func:`save_model`; returns ``(model, method)``."""
    with np.load(path, allow_pickle=False) as z:
        data = {k: z[k] for k in z.files}
    if str(data.get("format")) != MODEL_FORMAT:
        raise InvalidSpecError(f"{path} is not a {MODEL_FORMAT} file")
    if int(data["version"]) != MODEL_VERSION:
        raise InvalidSpecError(f"unsupported model version {int(data['version'])}")
    kind = str(data["kind"])
    n_classes = int(data["n_classes"])
    fmap = None
    if "map_seed" in data:
        fmap = map_from_descriptor({k[4:]: data[k].item() for k in data if k.startswith("map_")})
    if kind == "RLSC":
        model = RLSC(float(data["lam"]), n_classes, fmap)
        model.W = data["W"]
    elif kind == "IncrementalRLSC":
        model = IncrementalRLSC(float(data["lam"]), n_classes, fmap)
        model.R, model.b, model.W = data["R"], data["b"], data["W"]
        model.n_seen = int(data["n_seen"])
    elif kind == "KNN":
        model = KNN(int(data["k"]), n_classes).fit(data["X"], data["y"])
    elif kind == "LDA":
        model = LDA(n_classes, float(data["jitter"]))
        model.coef, model.intercept, model.means = data["coef"], data["intercept"], data["means"]
    else:
        raise InvalidSpecError(f"unknown model kind {kind!r}")
    return model, str(data["method"])
