"""DELTA-layout sessions, repetition splits, day orderings and a synthetic
multi-day generator with controllable distribution shift.

A session is an ``n x (m + 1)`` matrix: ``m`` EMG channels plus a trailing
label column. Rows are grouped class-major into fixed-length repetition
blocks (``rep_seconds * sample_rate`` samples each), every block holding one
gesture.
"""

import itertools
import math
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.linalg import expm

from .config import dataclass_from_kv, dataclass_to_kv, derive_seed, format_kv, parse_kv
from .dsp import FilterSpec, RawEmg, RmsSpec, apply_minmax, filter_emg, fit_extrema, rms_frames
from .errors import DataFormatError, InvalidSpecError

N_CHANNELS = 64
N_CLASSES = 7
SAMPLE_RATE = 2000.0
REP_SECONDS = 2.0
N_REPS = 10


@dataclass
class DeltaSession:
    data: np.ndarray  # (n, n_channels + 1), last column = label
    subject: int = 1
    day: int = 1
    sample_rate: float = SAMPLE_RATE
    rep_seconds: float = REP_SECONDS
    n_classes: int = N_CLASSES

    @property
    def n_channels(self):
        return self.data.shape[1] - 1

    @property
    def rep_samples(self):
        return int(round(self.sample_rate * self.rep_seconds))

    @property
    def labels(self):
        return self.data[:, -1].astype(int)

    def emg(self):
        return RawEmg(self.data[:, :-1], self.sample_rate)

    def blocks(self):
        """``(label, repetition, start, stop)`` for every repetition block."""
        labels = self.labels
        seen = {}
        out = []
        for start in range(0, self.data.shape[0], self.rep_samples):
            label = int(labels[start])
            rep = seen.get(label, 0)
            seen[label] = rep + 1
            out.append((label, rep, start, start + self.rep_samples))
        return out

    @property
    def reps(self):
        return max((b[1] for b in self.blocks()), default=-1) + 1

    def meta(self):
        return {
            "subject": self.subject,
            "day": self.day,
            "sample_rate": float(self.sample_rate),
            "rep_seconds": float(self.rep_seconds),
            "n_classes": self.n_classes,
            "n_channels": self.n_channels,
        }


def expected_rows(sample_rate=SAMPLE_RATE, reps=N_REPS, rep_seconds=REP_SECONDS,
                  n_classes=N_CLASSES):
    return int(round(sample_rate * reps * rep_seconds * n_classes))


def meta_path(path):
    return os.fspath(path) + ".meta"


def _csv_decoder(path, n_columns):
    try:
        frame = pd.read_csv(path, header=None, dtype=np.float64, engine="c",
                            float_precision="round_trip")
    except pd.errors.ParserError as exc:
        # "Expected 65 fields in line 10, saw 66"
        msg = str(exc)
        row = None
        if " in line " in msg:
            row = int(msg.split(" in line ")[1].split(",")[0]) - 1
        raise DataFormatError(f"column count mismatch: {msg.strip()}", row) from exc
    except pd.errors.EmptyDataError as exc:
        raise DataFormatError("empty session file") from exc
    except ValueError as exc:
        raise DataFormatError(f"non-numeric value: {exc}") from exc
    return frame.to_numpy()


def load_session(path, decoder=None, n_channels=N_CHANNELS, n_classes=N_CLASSES):
    """Read and validate a session.

    ``decoder(path) -> ndarray`` swaps in a different container; the default
    reads headerless CSV. Metadata come from ``<path>.meta`` when present.
    """
    meta = {}
    if os.path.exists(meta_path(path)):
        with open(meta_path(path)) as fh:
            meta = parse_kv(fh.read())
    n_channels = int(meta.get("n_channels", n_channels))
    n_classes = int(meta.get("n_classes", n_classes))
    data = decoder(path) if decoder is not None else _csv_decoder(path, n_channels + 1)
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] != n_channels + 1:
        raise DataFormatError(
            f"expected {n_channels + 1} columns, found {data.shape[1] if data.ndim == 2 else '?'}",
            0)
    bad = np.flatnonzero(~np.isfinite(data).all(axis=1))
    if bad.size:
        raise DataFormatError("truncated or non-numeric row", int(bad[0]))
    labels = data[:, -1]
    bad = np.flatnonzero((labels != np.round(labels)) | (labels < 0) | (labels >= n_classes))
    if bad.size:
        raise DataFormatError(f"label {labels[bad[0]]!r} outside 0..{n_classes - 1}",
                              int(bad[0]))
    session = DeltaSession(
        data,
        subject=int(meta.get("subject", 1)),
        day=int(meta.get("day", 1)),
        sample_rate=float(meta.get("sample_rate", SAMPLE_RATE)),
        rep_seconds=float(meta.get("rep_seconds", REP_SECONDS)),
        n_classes=n_classes,
    )
    _check_blocks(session)
    return session


def _check_blocks(session):
    n, size = session.data.shape[0], session.rep_samples
    if n == 0 or n % size:
        raise DataFormatError(
            f"{n} rows is not a whole number of {size}-sample repetitions", n - n % size)
    labels = session.labels.reshape(-1, size)
    bad = np.flatnonzero((labels != labels[:, :1]).any(axis=1))
    if bad.size:
        block = int(bad[0])
        row = block * size + int(np.flatnonzero(labels[block] != labels[block, 0])[0])
        raise DataFormatError("label changes inside a repetition block", row)


def write_session(path, session):
    data = session.data
    if np.all(data == np.round(data)) and np.all(np.abs(data) < 2**53):
        fmt = "%d"
        data = data.astype(np.int64)
    else:
        fmt = "%.17g"
    np.savetxt(path, data, fmt=fmt, delimiter=",")
    with open(meta_path(path), "w") as fh:
        fh.write(format_kv(session.meta()))


# -- frames -------------------------------------------------------------------

@dataclass
class FrameSet:
    """Feature frames of one session with their gesture and repetition ids."""

    X: np.ndarray
    y: np.ndarray
    rep: np.ndarray
    day: int = 1
    subject: int = 1

    def __len__(self):
        return self.X.shape[0]

    def subset(self, mask):
        return FrameSet(self.X[mask], self.y[mask], self.rep[mask], self.day, self.subject)

    def select_reps(self, reps):
        return self.subset(np.isin(self.rep, list(reps)))

    def empty(self):
        return self.subset(np.zeros(len(self), dtype=bool))


def session_frames(session, filter_spec=FilterSpec(), rms_spec=RmsSpec()):
    """Filter the continuous recording, then take RMS frames inside each
    repetition block so no window straddles two repetitions."""
    filtered = filter_emg(session.emg(), filter_spec).samples
    X, y, rep = [], [], []
    for label, r, start, stop in session.blocks():
        frames = rms_frames(RawEmg(filtered[start:stop], session.sample_rate), rms_spec)
        X.append(frames.values)
        y.append(np.full(len(frames), label))
        rep.append(np.full(len(frames), r))
    return FrameSet(np.vstack(X), np.concatenate(y).astype(int), np.concatenate(rep).astype(int),
                    session.day, session.subject)


def preprocess_session(session, filter_spec=FilterSpec(), rms_spec=RmsSpec()):
    """RMS frames normalized with extrema fitted on the whole session."""
    raw = session_frames(session, filter_spec, rms_spec)
    extrema = fit_extrema(raw.X)
    raw.X = apply_minmax(raw.X, extrema)
    return raw, extrema


def write_frames(path, frames):
    table = np.column_stack([frames.X, frames.y, frames.rep])
    n = frames.X.shape[1]
    fmt = ["%.17g"] * n + ["%d", "%d"]
    np.savetxt(path, table, fmt=fmt, delimiter=",")
    with open(meta_path(path), "w") as fh:
        fh.write(format_kv({"subject": frames.subject, "day": frames.day, "n_features": n}))


def load_frames(path):
    meta = {}
    if os.path.exists(meta_path(path)):
        with open(meta_path(path)) as fh:
            meta = parse_kv(fh.read())
    data = _csv_decoder(path, None)
    if data.shape[1] < 3 or not np.isfinite(data).all():
        raise DataFormatError(f"{path}: malformed frame file")
    return FrameSet(data[:, :-2], data[:, -2].astype(int), data[:, -1].astype(int),
                    int(meta.get("day", 1)), int(meta.get("subject", 1)))


# -- splits -------------------------------------------------------------------

@dataclass(frozen=True)
class SplitPlan:
    setting: str = "batch"
    train_reps: tuple = (0, 1)
    update_reps: tuple = (0, 1)

    def __post_init__(self):
        if self.setting not in ("batch", "incremental"):
            raise InvalidSpecError(f"unknown setting {self.setting!r}")


def make_splits(sessions, plan=SplitPlan()):
    """Per-position split dicts for sessions given in evaluation order.

    First session: ``train`` / ``test``. Later sessions: everything is
    ``test`` in the batch setting; the incremental setting carves out
    ``update`` repetitions first.
    """
    out = []
    for pos, fs in enumerate(sessions):
        if pos == 0:
            train = fs.select_reps(plan.train_reps)
            out.append({"train": train, "test": fs.subset(~np.isin(fs.rep, plan.train_reps))})
        elif plan.setting == "batch":
            out.append({"test": fs})
        else:
            out.append({"update": fs.select_reps(plan.update_reps),
                        "test": fs.subset(~np.isin(fs.rep, plan.update_reps))})
    return out


def enumerate_day_orders(days, limit=None, seed=0):
    """All orderings of ``days`` in lexicographic order, or a seeded subset.

    A subset always starts with the chronological order, so ``limit=1`` is
    the plain in-order run.
    """
    days = list(days)
    perms = list(itertools.permutations(days))
    if limit is None or limit >= len(perms):
        return perms
    if limit < 1:
        raise InvalidSpecError("limit must be >= 1")
    rng = np.random.default_rng(seed)
    picked = rng.choice(np.arange(1, len(perms)), size=limit - 1, replace=False)
    return [perms[0]] + [perms[i] for i in np.sort(picked)]


# -- synthetic generator ----------------------------------------------------

@dataclass(frozen=True)
class ShiftConfig:
    """Knobs of the synthetic multi-day generator.

    Class signatures are log-amplitude patterns over the channels. Each new
    session rotates the class-specific part of those patterns by a fresh
    random rotation of size ``rotation`` (radians, compounding), adds a
    random-walk ``mean_drift`` to the per-channel baseline and applies an
    independent per-channel gain of log-std ``gain_drift``.
    """

    n_classes: int = N_CLASSES
    channels: int = N_CHANNELS
    sessions: int = 6
    reps: int = N_REPS
    rep_seconds: float = REP_SECONDS
    sample_rate: float = SAMPLE_RATE
    class_spread: float = 0.5
    mean_drift: float = 0.0
    gain_drift: float = 0.0
    rotation: float = 0.0
    effort: float = 0.1
    noise: float = 5.0
    amplitude: float = 200.0
    powerline: float = 20.0
    subject: int = 1
    seed: int = 0

    def to_text(self):
        return dataclass_to_kv(self)

    @classmethod
    def from_text(cls, text):
        return dataclass_from_kv(cls, parse_kv(text))


def _random_rotation(rng, dim, angle):
    g = rng.normal(size=(dim, dim))
    skew = g - g.T
    skew /= np.linalg.norm(skew, 2)
    return expm(angle * skew)


def class_log_patterns(config):
    """Per-session ``(n_classes, channels)`` log-amplitude signatures."""
    rng = np.random.default_rng(derive_seed(config.seed, "patterns"))
    base = rng.normal(0.0, config.class_spread, size=(config.n_classes, config.channels))
    centre = base.mean(axis=0)
    deviation = base - centre
    Q = np.eye(config.channels)
    drift = np.zeros(config.channels)
    out = []
    for s in range(config.sessions):
        srng = np.random.default_rng(derive_seed(config.seed, "session", s))
        if s > 0:
            if config.rotation:
                Q = _random_rotation(srng, config.channels, config.rotation) @ Q
            drift = drift + config.mean_drift * srng.normal(size=config.channels)
        gain = config.gain_drift * srng.normal(size=config.channels)
        out.append(centre + drift + gain + deviation @ Q.T)
    return out


def generate_synthetic(config=ShiftConfig()):
    """Raw-signal sessions in the DELTA layout, deterministic in ``config.seed``.

    Each repetition is white noise scaled per channel by its class signature
    (times a per-repetition effort factor), plus background noise, a 50 Hz
    powerline component and a DC offset, rounded to integer device units.
    """
    rep_samples = int(round(config.sample_rate * config.rep_seconds))
    t = np.arange(rep_samples * config.reps * config.n_classes) / config.sample_rate
    sessions = []
    for s, logpat in enumerate(class_log_patterns(config)):
        rng = np.random.default_rng(derive_seed(config.seed, "signal", s))
        amp = config.amplitude * np.exp(logpat)  # (classes, channels)
        envelope = np.empty((config.n_classes * config.reps, config.channels))
        labels = np.repeat(np.arange(config.n_classes), config.reps)
        effort = np.exp(config.effort * rng.normal(size=labels.shape[0]))
        envelope[:] = amp[labels] * effort[:, None]
        n = t.shape[0]
        # carrier and background are independent Gaussians: draw their sum once
        scale = np.sqrt(envelope**2 + config.noise**2)
        sig = rng.standard_normal((n, config.channels))
        sig.reshape(-1, rep_samples, config.channels)[:] *= scale[:, None, :]
        phase = rng.uniform(0, 2 * math.pi, config.channels)
        wt = 2 * math.pi * 50.0 * t
        sig += np.outer(np.sin(wt), config.powerline * np.cos(phase))
        sig += np.outer(np.cos(wt), config.powerline * np.sin(phase))
        sig += rng.uniform(-100, 100, config.channels)
        np.round(sig, out=sig)
        data = np.column_stack([sig, np.repeat(labels, rep_samples)])
        sessions.append(DeltaSession(data, config.subject, s + 1, config.sample_rate,
                                     config.rep_seconds, config.n_classes))
    return sessions


def strong_shift_config(seed=0, **overrides):
    """The benchmark preset: every new day rotates the class signatures enough
    that a day-1 model loses a large share of its accuracy."""
    params = dict(rotation=1.5, class_spread=0.1, mean_drift=0.2, gain_drift=0.2, seed=seed)
    params.update(overrides)
    return ShiftConfig(**params)


def radial_sessions(n_sessions=3, n_classes=3, dim=8, reps=10, frames_per_rep=20,
                    noise=0.04, seed=0):
    """Frame-level fixture whose classes are concentric shells.

    No linear boundary separates the shells, but an RBF-like map does. Used to
    probe what random features add over plain RLSC.
    """
    rng = np.random.default_rng(seed)
    radii = 0.15 + 0.3 * np.arange(n_classes) / max(n_classes - 1, 1)
    out = []
    for s in range(n_sessions):
        centre = np.full(dim, 0.5) + 0.05 * rng.normal(size=dim)
        X, y, rep = [], [], []
        for c in range(n_classes):
            for r in range(reps):
                u = rng.normal(size=(frames_per_rep, dim))
                u /= np.linalg.norm(u, axis=1, keepdims=True)
                radius = radii[c] + noise * rng.normal(size=(frames_per_rep, 1))
                X.append(centre + radius * u)
                y.append(np.full(frames_per_rep, c))
                rep.append(np.full(frames_per_rep, r))
        out.append(FrameSet(np.vstack(X), np.concatenate(y), np.concatenate(rep), s + 1))
    return out
