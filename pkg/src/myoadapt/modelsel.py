"""Stratified k-fold grid search scored by ``mean - 2 * std`` of fold accuracy."""

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np

from .classify import N_CLASSES, one_hot
from .config import derive_seed
from .errors import InvalidSpecError, NumericalError
from .features import build_map
from .methods import PARAMS, check_method, is_random_feature, make_model, search_family

LAMBDA_GRID = tuple(np.logspace(-4, 3, 50).tolist())
GAMMA_GRID = tuple(np.logspace(np.log10(5e-4), np.log10(50), 50).tolist())
M_GRID = (10, 25, 50, 100, 250, 500, 750, 1000)
K_GRID = tuple(range(1, 50))
DEFAULT_M = 500


def _plain(x):
    # numpy scalars -> Python numbers, so params print and compare cleanly
    return x.item() if isinstance(x, np.generic) else x


@dataclass
class Grid:
    axes: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, values in self.axes.items():
            if len(values) == 0:
                raise InvalidSpecError(f"grid axis {name!r} is empty")
        self.axes = {k: tuple(_plain(x) for x in v) for k, v in self.axes.items()}

    def points(self):
        names = sorted(self.axes)
        for combo in itertools.product(*(self.axes[n] for n in names)):
            yield dict(zip(names, combo))

    def __len__(self):
        return int(np.prod([len(v) for v in self.axes.values()])) if self.axes else 1


def default_grid(method, M=DEFAULT_M):
    family = search_family(method)
    if family == "rlsc":
        return Grid({"lam": LAMBDA_GRID})
    if family == "rf-rlsc":
        return Grid({"lam": LAMBDA_GRID, "gamma": GAMMA_GRID, "M": (M,)})
    if family == "knn":
        return Grid({"k": K_GRID})
    return Grid({})


@dataclass
class CvResult:
    params: dict
    fold_acc: np.ndarray
    error: str = ""

    @property
    def mean(self):
        return float(np.mean(self.fold_acc)) if self.ok else float("nan")

    @property
    def std(self):
        return float(np.std(self.fold_acc)) if self.ok else float("nan")

    @property
    def score(self):
        return self.mean - 2.0 * self.std if self.ok else float("-inf")

    @property
    def ok(self):
        return not self.error


@dataclass
class SearchResult:
    best: dict
    table: list

    def best_result(self):
        return next(r for r in self.table if r.params == self.best)

    def to_tsv(self):
        return format_cv_table(self.table)


def kfold_split(y, folds=10, seed=0):
    """Fold index arrays, stratified by class when every class can fill all folds."""
    y = np.asarray(y)
    n = y.shape[0]
    if folds < 2 or n < folds:
        raise InvalidSpecError(f"need 2 <= folds <= n, got folds={folds}, n={n}")
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(y, return_counts=True)
    buckets = [[] for _ in range(folds)]
    if counts.min() < folds:
        warnings.warn("a class has fewer samples than folds; using unstratified folds",
                      RuntimeWarning, stacklevel=2)
        for i, idx in enumerate(rng.permutation(n)):
            buckets[i % folds].append(idx)
    else:
        offset = 0
        for c in classes:
            for idx in rng.permutation(np.flatnonzero(y == c)):
                buckets[offset % folds].append(idx)
                offset += 1
    return [np.sort(np.array(b, dtype=int)) for b in buckets]


def _complexity_key(params):
    # smaller M, then larger lambda, then smaller k, then lexicographic
    return (
        params.get("M", 0),
        -params.get("lam", 0.0),
        params.get("k", 0),
        tuple(sorted((k, v) for k, v in params.items())),
    )


def pick_best(results):
    ok = [r for r in results if r.ok]
    if not ok:
        diag = "; ".join(f"{r.params}: {r.error}" for r in results)
        raise NumericalError(f"every grid point failed: {diag}")
    top = max(r.score for r in ok)
    return min((r for r in ok if r.score == top), key=lambda r: _complexity_key(r.params))


def _ridge_path(Z_tr, Y_tr, Z_va, y_va, lams):
    # one eigendecomposition per fold serves the whole lambda axis
    evals, V = np.linalg.eigh(Z_tr.T @ Z_tr)
    proj = V.T @ (Z_tr.T @ Y_tr)
    Zv = Z_va @ V
    acc = []
    for lam in lams:
        scores = Zv @ (proj / (evals + lam)[:, None])
        acc.append(np.mean(np.argmax(scores, 1) == y_va))
    return acc


def _cv_ridge(Z, y, fold_idx, lams, n_classes):
    acc = np.zeros((len(lams), len(fold_idx)))
    Y = one_hot(y, n_classes)
    for f, va in enumerate(fold_idx):
        tr = np.setdiff1d(np.arange(Z.shape[0]), va, assume_unique=True)
        acc[:, f] = _ridge_path(Z[tr], Y[tr], Z[va], y[va], lams)
    return acc


def _cv_knn(X, y, fold_idx, ks, n_classes):
    acc = np.zeros((len(ks), len(fold_idx)))
    for f, va in enumerate(fold_idx):
        tr = np.setdiff1d(np.arange(X.shape[0]), va, assume_unique=True)
        Xt, yt = X[tr], y[tr]
        dist = (Xt * Xt).sum(1)[None, :] - 2.0 * X[va] @ Xt.T
        order = np.argsort(dist, axis=1, kind="stable")
        for i, k in enumerate(ks):
            near = yt[order[:, :min(k, len(tr))]]
            votes = np.zeros((len(va), n_classes), dtype=int)
            np.add.at(votes, (np.arange(len(va))[:, None], near), 1)
            acc[i, f] = np.mean(votes.argmax(1) == y[va])
    return acc


def _cv_generic(method, params, X, y, fold_idx, seed, n_classes):
    acc = np.zeros(len(fold_idx))
    for f, va in enumerate(fold_idx):
        tr = np.setdiff1d(np.arange(X.shape[0]), va, assume_unique=True)
        model = make_model(method, params, X.shape[1], seed, n_classes).fit(X[tr], y[tr])
        acc[f] = np.mean(model.predict(X[va]) == y[va])
    return acc


def grid_search(X, y, method, grid=None, folds=10, seed=0, n_classes=N_CLASSES):
    """Cross-validate every grid point; returns the best parameters and the table.

    Random-feature maps are drawn from the same seed used by
    :func:`myoadapt.methods.make_model`, so the selected point refits to the
    exact map that was scored.
    """
    check_method(method)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    grid = grid if grid is not None else default_grid(method)
    expected = set(PARAMS[method])
    if set(grid.axes) != expected:
        raise InvalidSpecError(f"{method} grid needs axes {sorted(expected)}, got {sorted(grid.axes)}")
    fold_idx = kfold_split(y, folds, derive_seed(seed, "folds"))
    family = search_family(method)
    results = []
    if family in ("rlsc", "rf-rlsc"):
        lams = grid.axes["lam"]
        outer = [{}] if family == "rlsc" else [
            {"gamma": g, "M": m} for g in grid.axes["gamma"] for m in grid.axes["M"]]
        for extra in outer:
            try:
                if extra:
                    fmap = build_map(X.shape[1], int(extra["M"]), float(extra["gamma"]),
                                     derive_seed(seed, "feature-map"))
                    Z = fmap.transform(X)
                else:
                    Z = X
                acc = _cv_ridge(Z, y, fold_idx, lams, n_classes)
                for lam, row in zip(lams, acc):
                    results.append(CvResult({**extra, "lam": lam}, row))
            except (np.linalg.LinAlgError, NumericalError, ValueError) as exc:
                for lam in lams:
                    results.append(CvResult({**extra, "lam": lam}, np.zeros(0), str(exc)))
    elif family == "knn":
        ks = grid.axes["k"]
        acc = _cv_knn(X, y, fold_idx, ks, n_classes)
        results = [CvResult({"k": k}, row) for k, row in zip(ks, acc)]
    else:
        for params in grid.points():
            try:
                results.append(CvResult(params, _cv_generic(method, params, X, y, fold_idx,
                                                             seed, n_classes)))
            except (np.linalg.LinAlgError, NumericalError, ValueError) as exc:
                results.append(CvResult(params, np.zeros(0), str(exc)))
    results.sort(key=lambda r: tuple(sorted(r.params.items())))
    best = pick_best(results)
    return SearchResult(dict(best.params), results)


def pick_dimension(scores_by_M, margin=0.01):
    """Smallest M whose score is within ``margin`` of the best."""
    top = max(scores_by_M.values())
    return min(M for M, s in scores_by_M.items() if s >= top - margin)


def select_rf_dimension(X, y, M_grid=M_GRID, lam=1e-2, gamma=None, folds=10, seed=0,
                        margin=0.01, n_classes=N_CLASSES):
    gamma = provisional_gamma(X) if gamma is None else gamma
    res = grid_search(X, y, "rf-rlsc", Grid({"lam": (lam,), "gamma": (gamma,), "M": M_grid}),
                      folds, seed, n_classes)
    M = pick_dimension({r.params["M"]: r.score for r in res.table if r.ok}, margin)
    return M, res


def provisional_gamma(X):
    """``1 / (d * var(X))``: a data-scaled starting point for the RBF width."""
    X = np.asarray(X, dtype=float)
    var = X.var()
    return 1.0 / (X.shape[1] * var) if var > 0 else 1.0


def select(X, y, method, grid=None, folds=10, seed=0, n_classes=N_CLASSES,
           M_grid=None, margin=0.01):
    """Full selection for ``method``.

    For random-feature methods without an explicit M axis the dimension is
    chosen first at provisional (lambda, gamma), then (lambda, gamma) are
    searched at that M.
    """
    if is_random_feature(method) and (grid is None or "M" not in grid.axes):
        M, _ = select_rf_dimension(X, y, M_grid or M_GRID, folds=folds, seed=seed,
                                   margin=margin, n_classes=n_classes)
        axes = dict(grid.axes) if grid is not None else {"lam": LAMBDA_GRID, "gamma": GAMMA_GRID}
        grid = Grid({**axes, "M": (M,)})
    return grid_search(X, y, method, grid, folds, seed, n_classes)


def format_cv_table(results):
    names = sorted({k for r in results for k in r.params})
    n_folds = max((len(r.fold_acc) for r in results), default=0)
    header = names + [f"fold{i + 1}" for i in range(n_folds)] + ["mean", "std", "score", "error"]
    lines = ["\t".join(header)]
    for r in results:
        folds = [repr(float(a)) for a in r.fold_acc] + [""] * (n_folds - len(r.fold_acc))
        row = [repr(r.params.get(n, "")) if n in r.params else "" for n in names]
        row += folds + [repr(r.mean), repr(r.std), repr(r.score), r.error]
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


def parse_best(text):
    """Read a ``key=value`` best-parameter file into typed values."""
    from .config import parse_kv

    out = {}
    for k, v in parse_kv(text).items():
        out[k] = int(v) if k in ("k", "M") else float(v)
    return out
