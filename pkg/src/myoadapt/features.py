"""Random Fourier features for the Gaussian kernel exp(-gamma * ||x - x'||^2)."""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSpecError


@dataclass(frozen=True)
class RandomFeatureMap:
    """Frozen map ``x -> sqrt(2/M) cos(x @ frequencies.T + offsets)``.

    The random draws are fully determined by ``(n_inputs, n_features, gamma,
    seed)``, which is all that gets persisted.
    """

    n_inputs: int
    n_features: int
    gamma: float
    seed: int
    frequencies: np.ndarray = field(repr=False, compare=False)
    offsets: np.ndarray = field(repr=False, compare=False)

    def __post_init__(self):
        self.frequencies.setflags(write=False)
        self.offsets.setflags(write=False)

    def transform(self, X):
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X2 = np.atleast_2d(X)
        if X2.shape[1] != self.n_inputs:
            raise InvalidSpecError(
                f"feature map expects dim {self.n_inputs}, got {X2.shape[1]}"
            )
        Z = np.sqrt(2.0 / self.n_features) * np.cos(X2 @ self.frequencies.T + self.offsets)
        return Z[0] if single else Z

    __call__ = transform

    def descriptor(self):
        return {
            "n_inputs": self.n_inputs,
            "n_features": self.n_features,
            "gamma": self.gamma,
            "seed": self.seed,
        }


def build_map(n_inputs, n_features=500, gamma=0.1, seed=0):
    if n_inputs < 1 or n_features < 1:
        raise InvalidSpecError("n_inputs and n_features must be >= 1")
    if not gamma > 0:
        raise InvalidSpecError(f"gamma must be positive, got {gamma}")
    rng = np.random.default_rng(seed)
    # spectral density of exp(-gamma r^2) is N(0, 2 gamma I)
    frequencies = rng.normal(0.0, np.sqrt(2.0 * gamma), size=(n_features, n_inputs))
    offsets = rng.uniform(0.0, 2.0 * np.pi, size=n_features)
    return RandomFeatureMap(int(n_inputs), int(n_features), float(gamma), int(seed),
                            frequencies, offsets)


def map_from_descriptor(desc):
    return build_map(int(desc["n_inputs"]), int(desc["n_features"]),
                     float(desc["gamma"]), int(desc["seed"]))


def gaussian_kernel(A, B, gamma):
    """Exact Gram matrix exp(-gamma ||a - b||^2) between rows of A and B."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.exp(-gamma * np.maximum(sq, 0.0))
