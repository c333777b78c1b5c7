"""Multi-day evaluation: batch and incremental protocols over day orderings,
paired accuracy differences, prediction latency and KPCA projections."""

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .classify import N_CLASSES, VoteFilter
from .config import derive_seed
from .dataset import SplitPlan, enumerate_day_orders, make_splits
from .errors import InvalidSpecError
from .features import gaussian_kernel
from .methods import check_method, make_model
from .modelsel import select

REPORT_SCHEMA = "myoadapt-report/1"
REPORT_COLUMNS = ("subject", "order", "setting", "method", "params", "position", "day",
                  "n_test", "correct", "accuracy", "voted_accuracy")
SUMMARY_COLUMNS = ("setting", "method", "position", "n_runs", "mean_accuracy",
                   "std_accuracy", "median_accuracy")


@dataclass
class ProtocolRun:
    subject: int
    order: tuple
    setting: str
    method: str
    params: dict
    accuracy: list = field(default_factory=list)
    voted_accuracy: list = field(default_factory=list)
    confusion: list = field(default_factory=list)
    latency: dict = field(default_factory=dict)
    model: object = field(default=None, repr=False)

    @property
    def n_test(self):
        return [int(c.sum()) for c in self.confusion]

    @property
    def correct(self):
        return [int(np.trace(c)) for c in self.confusion]


def confusion_matrix(y_true, y_pred, n_classes=N_CLASSES):
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, int), np.asarray(y_pred, int)), 1)
    return cm


def voted_predictions(pred, frames, window):
    """Vote-filter predictions, restarting the filter at each repetition."""
    if window <= 1 or len(pred) == 0:
        return pred
    out = np.empty_like(pred)
    keys = frames.y * 10_000 + frames.rep
    vf = VoteFilter(window)
    prev = None
    for i, (p, key) in enumerate(zip(pred, keys)):
        if key != prev:
            vf.reset()
            prev = key
        out[i] = vf.filter(p)
    return out


def _rep_keys(fs):
    return {(fs.day, int(c), int(r)) for c, r in set(zip(fs.y.tolist(), fs.rep.tolist()))}


def _time_single(model, X, repeats=1, warmup=5):
    for x in X[:warmup]:
        model.predict(x[None, :])
    times = []
    for _ in range(repeats):
        for x in X:
            t0 = time.perf_counter()
            model.predict(x[None, :])
            times.append(time.perf_counter() - t0)
    return np.asarray(times)


def run_protocol(sessions, method, setting="batch", params=None, grid=None, folds=10, seed=0,
                 plan=None, vote_window=5, n_classes=N_CLASSES, latency_frames=0):
    """Evaluate ``method`` on ``sessions`` (FrameSets in evaluation order).

    Without ``params`` the hyperparameters are selected by cross-validation on
    the first session's training split and then frozen.
    """
    check_method(method, setting)
    plan = plan or SplitPlan(setting)
    if plan.setting != setting:
        plan = SplitPlan(setting, plan.train_reps, plan.update_reps)
    splits = make_splits(sessions, plan)
    train = splits[0]["train"]
    if params is None:
        params = select(train.X, train.y, method, grid, folds, seed, n_classes).best
    model = make_model(method, params, train.X.shape[1], seed, n_classes).fit(train.X, train.y)
    seen = _rep_keys(train)
    run = ProtocolRun(sessions[0].subject, tuple(fs.day for fs in sessions), setting, method,
                      dict(params), model=model)
    for pos, split in enumerate(splits):
        if "update" in split and len(split["update"]):
            model.partial_fit(split["update"].X, split["update"].y)
            seen |= _rep_keys(split["update"])
        test = split["test"]
        if seen & _rep_keys(test):
            raise AssertionError("a training/update repetition leaked into the test split")
        pred = model.predict(test.X) if len(test) else np.zeros(0, dtype=int)
        cm = confusion_matrix(test.y, pred, n_classes)
        run.confusion.append(cm)
        run.accuracy.append(float(np.trace(cm) / cm.sum()) if cm.sum() else float("nan"))
        voted = voted_predictions(pred, test, vote_window)
        run.voted_accuracy.append(float(np.mean(voted == test.y)) if len(test) else float("nan"))
        if latency_frames and pos == 0 and len(test):
            t = _time_single(model, test.X[:latency_frames])
            run.latency = {"median_s": float(np.median(t)), "p99_s": float(np.quantile(t, 0.99))}
    return run


def run_batch_protocol(sessions, method, params=None, **kw):
    return run_protocol(sessions, method, "batch", params, **kw)


def run_incremental_protocol(sessions, method, params=None, **kw):
    return run_protocol(sessions, method, "incremental", params, **kw)


def evaluate(sessions, method, settings=("batch", "incremental"), permutations=None, seed=0,
             params=None, grid=None, folds=10, vote_window=5, n_classes=N_CLASSES):
    """Run the protocols over day orderings of one subject's sessions.

    Hyperparameters depend only on the first day of an ordering, so the
    selection is cached per first day.
    """
    by_day = {fs.day: fs for fs in sessions}
    orders = enumerate_day_orders(sorted(by_day), permutations,
                                  derive_seed(seed, "permutations"))
    chosen = {}
    runs = []
    for order in orders:
        ordered = [by_day[d] for d in order]
        hp = params
        if hp is None:
            if order[0] not in chosen:
                train = make_splits(ordered[:1])[0]["train"]
                chosen[order[0]] = select(train.X, train.y, method, grid, folds, seed,
                                          n_classes).best
            hp = chosen[order[0]]
        for setting in settings:
            if setting == "incremental" and "-incr" not in method:
                m = method + "-incr"
            else:
                m = method
            runs.append(run_protocol(ordered, m, setting, hp, seed=seed,
                                     vote_window=vote_window, n_classes=n_classes))
    return runs


# -- comparisons --------------------------------------------------------------

@dataclass
class DifferenceDistribution:
    samples: dict  # position -> ndarray of acc(a) - acc(b)

    def quantiles(self, qs=(0.05, 0.25, 0.5, 0.75, 0.95)):
        return {pos: np.quantile(v, qs) for pos, v in self.samples.items()}

    def median(self):
        return {pos: float(np.median(v)) for pos, v in self.samples.items()}

    def all(self):
        return np.concatenate([self.samples[k] for k in sorted(self.samples)])


def accuracy_difference_distribution(runs_a, runs_b):
    """Pair runs by (subject, day order) and collect per-position differences."""
    index_b = {(r.subject, r.order): r for r in runs_b}
    if len(index_b) != len(runs_b):
        raise InvalidSpecError("duplicate (subject, order) in second run list")
    keys_a = [(r.subject, r.order) for r in runs_a]
    if len(set(keys_a)) != len(keys_a) or set(keys_a) != set(index_b):
        raise InvalidSpecError("runs cannot be paired exactly by (subject, order)")
    samples = {}
    for ra in runs_a:
        rb = index_b[(ra.subject, ra.order)]
        for pos, (a, b) in enumerate(zip(ra.accuracy, rb.accuracy)):
            samples.setdefault(pos, []).append(a - b)
    return DifferenceDistribution({k: np.asarray(v) for k, v in samples.items()})


def latency_benchmark(models, frames, repeats=10, warmup=10):
    """Median and p99 single-frame prediction time per model (seconds)."""
    if not models:
        raise InvalidSpecError("latency_benchmark needs at least one model")
    frames = np.atleast_2d(np.asarray(frames, dtype=float))
    out = {}
    for name, model in models.items():
        t = _time_single(model, frames, repeats, warmup)
        out[name] = {"median_s": float(np.median(t)), "p99_s": float(np.quantile(t, 0.99)),
                     "n": int(t.size)}
    return out


# -- KPCA -----------------------------------------------------------------------

@dataclass
class KpcaModel:
    X: np.ndarray
    gamma: float
    eigenvalues: np.ndarray
    alphas: np.ndarray  # eigenvectors scaled by 1/sqrt(eigenvalue)
    col_mean: np.ndarray
    total_mean: float

    @property
    def embedding(self):
        return self.alphas * self.eigenvalues


def kpca_fit(X, gamma, n_components=2, cap=8000, seed=0):
    X = np.asarray(X, dtype=float)
    if X.shape[0] > cap:
        warnings.warn(f"subsampling {X.shape[0]} frames to {cap} for the kernel matrix",
                      RuntimeWarning, stacklevel=2)
        idx = np.sort(np.random.default_rng(seed).choice(X.shape[0], cap, replace=False))
        X = X[idx]
    K = gaussian_kernel(X, X, gamma)
    K = 0.5 * (K + K.T)
    col_mean = K.mean(axis=0)
    total = float(col_mean.mean())
    Kc = K - col_mean[None, :] - col_mean[:, None] + total
    evals, evecs = np.linalg.eigh(Kc)
    order = np.argsort(evals)[::-1][:n_components]
    evals = evals[order]
    evecs = evecs[:, order]
    # deterministic sign: largest-magnitude entry positive
    signs = np.sign(evecs[np.abs(evecs).argmax(axis=0), np.arange(evecs.shape[1])])
    evecs = evecs * np.where(signs == 0, 1.0, signs)
    safe = np.where(evals > 0, evals, np.inf)
    return KpcaModel(X, float(gamma), evals, evecs / np.sqrt(safe), col_mean, total)


def kpca_project(model, X):
    K = gaussian_kernel(X, model.X, model.gamma)
    Kc = K - K.mean(axis=1, keepdims=True) - model.col_mean[None, :] + model.total_mean
    return Kc @ model.alphas


def kpca_rows(model, sessions):
    """``(x, y, class, day)`` rows for every frame of every session."""
    rows = []
    for fs in sessions:
        P = kpca_project(model, fs.X)
        rows.extend(zip(P[:, 0].tolist(), P[:, 1].tolist(), fs.y.tolist(),
                        [fs.day] * len(fs)))
    return rows


def format_kpca(rows):
    lines = ["x\ty\tclass\tday"]
    lines += [f"{x!r}\t{y!r}\t{c}\t{d}" for x, y, c, d in rows]
    return "\n".join(lines) + "\n"


# -- reports --------------------------------------------------------------------

def _params_str(params):
    return ";".join(f"{k}={params[k]!r}" for k in sorted(params))


def _fmt(v):
    return repr(float(v))


def format_report(runs):
    lines = [f"# schema={REPORT_SCHEMA}", "\t".join(REPORT_COLUMNS)]
    for run in runs:
        order = "-".join(str(d) for d in run.order)
        for pos, day in enumerate(run.order):
            lines.append("\t".join([
                str(run.subject), order, run.setting, run.method, _params_str(run.params),
                str(pos + 1), str(day), str(run.n_test[pos]), str(run.correct[pos]),
                _fmt(run.accuracy[pos]), _fmt(run.voted_accuracy[pos]),
            ]))
    return "\n".join(lines) + "\n"


def format_summary(runs):
    groups = {}
    for run in runs:
        for pos, acc in enumerate(run.accuracy):
            groups.setdefault((run.setting, run.method, pos + 1), []).append(acc)
    lines = [f"# schema={REPORT_SCHEMA}", "\t".join(SUMMARY_COLUMNS)]
    for key in sorted(groups):
        acc = np.asarray(groups[key])
        lines.append("\t".join([key[0], key[1], str(key[2]), str(acc.size), _fmt(acc.mean()),
                                _fmt(acc.std()), _fmt(np.median(acc))]))
    return "\n".join(lines) + "\n"


def emit_report(runs, directory=None):
    """Return ``(report, summary)`` text; also write both files if a directory is given."""
    report, summary = format_report(runs), format_summary(runs)
    if directory is not None:
        import os

        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, "report.tsv"), "w") as fh:
            fh.write(report)
        with open(os.path.join(directory, "summary.tsv"), "w") as fh:
            fh.write(summary)
    return report, summary


def parse_report(text):
    """Rows of a report as dicts (the schema line is checked, not returned)."""
    lines = [l for l in text.splitlines() if l]
    if not lines or lines[0] != f"# schema={REPORT_SCHEMA}":
        raise InvalidSpecError("not a myoadapt report")
    header = lines[1].split("\t")
    return [dict(zip(header, l.split("\t"))) for l in lines[2:]]
