"""Method registry: maps CLI method ids to configured classifiers."""

from .classify import KNN, LDA, N_CLASSES, RLSC, IncrementalRLSC
from .config import derive_seed
from .errors import InvalidSpecError
from .features import build_map

METHODS = ("rlsc", "rf-rlsc", "rlsc-incr", "rf-rlsc-incr", "knn", "lda")
INCREMENTAL_METHODS = ("rlsc-incr", "rf-rlsc-incr")

# hyperparameters each method consumes
PARAMS = {
    "rlsc": ("lam",),
    "rlsc-incr": ("lam",),
    "rf-rlsc": ("lam", "gamma", "M"),
    "rf-rlsc-incr": ("lam", "gamma", "M"),
    "knn": ("k",),
    "lda": (),
}


def check_method(method, setting="batch"):
    if method not in METHODS:
        raise InvalidSpecError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    if setting not in ("batch", "incremental"):
        raise InvalidSpecError(f"unknown setting {setting!r}")
    if setting == "incremental" and method not in INCREMENTAL_METHODS:
        raise InvalidSpecError(f"method {method!r} cannot run in the incremental setting")


def is_random_feature(method):
    return method.startswith("rf-")


def search_family(method):
    """Methods sharing a cross-validation routine (the -incr twins fit identically)."""
    return method.replace("-incr", "")


def make_model(method, params, n_inputs, seed=0, n_classes=N_CLASSES):
    check_method(method)
    missing = [p for p in PARAMS[method] if p not in params]
    if missing:
        raise InvalidSpecError(f"{method} needs hyperparameters {missing}")
    fmap = None
    if is_random_feature(method):
        fmap = build_map(n_inputs, int(params["M"]), float(params["gamma"]),
                         derive_seed(seed, "feature-map"))
    if method in ("rlsc", "rf-rlsc"):
        return RLSC(float(params["lam"]), n_classes, fmap)
    if method in INCREMENTAL_METHODS:
        return IncrementalRLSC(float(params["lam"]), n_classes, fmap,
                               n_inputs=None if fmap else n_inputs)
    if method == "knn":
        return KNN(int(params["k"]), n_classes)
    return LDA(n_classes)
