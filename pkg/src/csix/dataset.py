"""CSI fingerprint data model, CSV interchange and a synthetic multipath generator.

A sample is a K-dimensional amplitude vector laid out antenna-pair major:
the first S entries are subcarriers 1..S of the first Tx-Rx pairing, the next
S entries belong to the second pairing, and so on.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Iterable

import numpy as np

SPLITS = ("train", "test")

# Intel 5300 reports 30 subcarrier groups spaced 4 x 312.5 kHz apart.
SUBCARRIER_SPACING_HZ = 4 * 312.5e3
# Keeps raw amplitudes in the 0..~35 range of commodity NIC CSI reports.
AMPLITUDE_SCALE = 3.0

STD_FLOOR = 1e-8


class DatasetError(ValueError):
    """Raised for malformed CSI data or inconsistent dataset parameters."""


@dataclass(frozen=True)
class CsiSample:
    channels: np.ndarray
    location_id: int
    session_id: int = 0
    split: str = "train"

    def __post_init__(self):
        channels = np.asarray(self.channels, dtype=np.float64)
        channels.setflags(write=False)
        object.__setattr__(self, "channels", channels)
        if channels.ndim != 1:
            raise DatasetError("channels must be a 1-D vector")
        if not np.all(np.isfinite(channels)):
            raise DatasetError("channel amplitudes must be finite")
        if np.any(channels < 0):
            raise DatasetError("channel amplitudes must be non-negative")
        if self.split not in SPLITS:
            raise DatasetError(f"unknown split {self.split!r}")
        if self.session_id < 0:
            raise DatasetError("session_id must be >= 0")

    def __eq__(self, other):
        if not isinstance(other, CsiSample):
            return NotImplemented
        return (
            self.location_id == other.location_id
            and self.session_id == other.session_id
            and self.split == other.split
            and np.array_equal(self.channels, other.channels)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Dataset:
    """An immutable collection of CSI samples sharing one channel layout.

    ``K == S * A``. Location ids are 1-based and lie in ``[1, M]``.
    """

    samples: tuple
    S: int = 30
    A: int = 4
    M: int = 16
    location_names: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        if not self.location_names:
            names = tuple(f"p{m}" for m in range(1, self.M + 1))
            object.__setattr__(self, "location_names", names)
        else:
            object.__setattr__(self, "location_names", tuple(self.location_names))
        if self.S < 1 or self.A < 1 or self.M < 1:
            raise DatasetError("S, A and M must be positive")
        if len(self.location_names) != self.M:
            raise DatasetError("need exactly M location names")
        for i, s in enumerate(self.samples):
            if s.channels.shape[0] != self.K:
                raise DatasetError(
                    f"sample {i}: expected {self.K} channels, got {s.channels.shape[0]}"
                )
            if not 1 <= s.location_id <= self.M:
                raise DatasetError(
                    f"sample {i}: location_id {s.location_id} outside [1, {self.M}]"
                )

    @property
    def K(self) -> int:
        return self.S * self.A

    def __len__(self):
        return len(self.samples)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            (self.S, self.A, self.M, self.location_names)
            == (other.S, other.A, other.M, other.location_names)
            and self.samples == other.samples
        )

    __hash__ = None

    @property
    def X(self) -> np.ndarray:
        """Channel matrix, one row per sample."""
        if not self.samples:
            return np.zeros((0, self.K))
        return np.stack([s.channels for s in self.samples])

    @property
    def labels(self) -> np.ndarray:
        """1-based location ids."""
        return np.array([s.location_id for s in self.samples], dtype=np.int64)

    @property
    def splits(self) -> list[str]:
        return [s.split for s in self.samples]

    def with_samples(self, samples: Iterable[CsiSample]) -> "Dataset":
        return replace(self, samples=tuple(samples))

    def subset(self, location_id=None, split=None) -> "Dataset":
        keep = [
            s
            for s in self.samples
            if (location_id is None or s.location_id == location_id)
            and (split is None or s.split == split)
        ]
        return self.with_samples(keep)

    def concat(self, other: "Dataset") -> "Dataset":
        if (self.S, self.A, self.M) != (other.S, other.A, other.M):
            raise DatasetError("cannot concatenate datasets with different layouts")
        return self.with_samples(self.samples + other.samples)

    def check_train_coverage(self):
        present = {s.location_id for s in self.samples if s.split == "train"}
        missing = sorted(set(range(1, self.M + 1)) - present)
        if missing:
            raise DatasetError(f"no training samples for locations {missing}")


def from_arrays(X, labels, *, S=30, A=4, M=None, sessions=None, split="train") -> Dataset:
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if M is None:
        M = int(labels.max()) if labels.size else 1
    if sessions is None:
        sessions = np.zeros(len(labels), dtype=np.int64)
    samples = [
        CsiSample(x, int(m), int(sess), split) for x, m, sess in zip(X, labels, sessions)
    ]
    return Dataset(tuple(samples), S=S, A=A, M=M)


# --------------------------------------------------------------------------- CSV


def _channel_header(K: int) -> list[str]:
    width = max(3, len(str(K)))
    return [f"c{k:0{width}d}" for k in range(1, K + 1)]


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def save_csv(dataset: Dataset, path) -> None:
    """Write ``dataset`` as ``location,session,split,c001..cK``.

    Amplitudes carry 17 significant digits so a reload is bit-exact.
    """
    path = Path(path)
    header = ["location", "session", "split"] + _channel_header(dataset.K)
    lines = [",".join(header)]
    for s in dataset.samples:
        row = [str(s.location_id), str(s.session_id), s.split]
        row.extend(_fmt(v) for v in s.channels)
        lines.append(",".join(row))
    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot write {path}: {exc}") from exc


def load_csv(path, *, S: int = 30, A: int | None = None, M: int | None = None) -> Dataset:
    """Read a dataset written by :func:`save_csv`.

    ``A`` defaults to ``K // S``; ``M`` defaults to the largest location id.
    Row numbers in error messages count data rows from 1.
    """
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        if header[:3] != ["location", "session", "split"]:
            raise DatasetError(f"{path}: header must start with location,session,split")
        K = len(header) - 3
        if header[3:] != _channel_header(K):
            raise DatasetError(f"{path}: channel columns must be c001..c{K:03d}")
        if K == 0 or K % S:
            raise DatasetError(f"{path}: {K} channels is not a multiple of S={S}")
        rows = []
        for rowno, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != K + 3:
                raise DatasetError(f"row {rowno}: expected {K} channels, got {len(row) - 3}")
            try:
                loc, sess = int(row[0]), int(row[1])
                values = np.array([float(v) for v in row[3:]])
            except ValueError as exc:
                raise DatasetError(f"row {rowno}: {exc}") from None
            if not np.all(np.isfinite(values)):
                raise DatasetError(f"row {rowno}: non-finite amplitude")
            if np.any(values < 0):
                raise DatasetError(f"row {rowno}: negative amplitude")
            if row[2] not in SPLITS:
                raise DatasetError(f"row {rowno}: unknown split {row[2]!r}")
            rows.append((loc, sess, row[2], values))
    if A is None:
        A = K // S
    if S * A != K:
        raise DatasetError(f"{path}: K={K} does not equal S*A={S * A}")
    if M is None:
        M = max((r[0] for r in rows), default=1)
    for rowno, r in enumerate(rows, start=1):
        if not 1 <= r[0] <= M:
            raise DatasetError(f"row {rowno}: location_id {r[0]} outside [1, {M}]")
    samples = tuple(CsiSample(v, loc, sess, split) for loc, sess, split, v in rows)
    return Dataset(samples, S=S, A=A, M=M)


# --------------------------------------------------------------------------- synthesis


@dataclass(frozen=True)
class SynthConfig:
    M: int = 8
    S: int = 30
    A: int = 4
    paths_per_location: int = 6
    train_per_loc: int = 100
    test_per_loc: int = 50
    sessions_train: int = 8
    sessions_test: int = 2
    session_drift_sigma: float = 0.3
    noise_sigma: float = 0.375
    seed: int = 42

    def __post_init__(self):
        counts = (
            "M", "S", "A", "paths_per_location", "train_per_loc",
            "test_per_loc", "sessions_train", "sessions_test",
        )
        for name in counts:
            if int(getattr(self, name)) < 1:
                raise DatasetError(f"{name} must be >= 1")
        for name in ("session_drift_sigma", "noise_sigma"):
            v = float(getattr(self, name))
            if not (v >= 0 and math.isfinite(v)):
                raise DatasetError(f"{name} must be a finite value >= 0")

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise DatasetError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except DatasetError:
            raise
        except (TypeError, ValueError) as exc:
            raise DatasetError(f"invalid config value: {exc}") from None

    @classmethod
    def from_json(cls, path) -> "SynthConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DatasetError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise DatasetError("config must be a JSON object")
        return cls.from_dict(data)


def _tap_delays(rng, n, mean_gap):
    # Poisson arrivals: more scatterers push energy to longer excess delays.
    return np.cumsum(rng.exponential(mean_gap, size=n))


def _frequency_response(gains, delays, freqs):
    phase = np.exp(-2j * np.pi * np.outer(freqs, delays))
    return phase @ gains


def _base_responses(cfg: SynthConfig, rng) -> np.ndarray:
    """Noise-free amplitudes, shape (M, A, S)."""
    freqs = np.arange(cfg.S) * SUBCARRIER_SPACING_HZ
    mean_gap = 25e-9
    decay = 60e-9
    base = np.empty((cfg.M, cfg.A, cfg.S))
    for a in range(cfg.A):
        # Static room response shared by all locations of this antenna pair.
        env_delays = _tap_delays(rng, 4, mean_gap)
        env_gains = (rng.normal(size=4) + 1j * rng.normal(size=4)) * np.exp(-env_delays / decay)
        env_gains[0] += 2.0
        static = _frequency_response(env_gains, env_delays, freqs)
        for m in range(cfg.M):
            P = cfg.paths_per_location
            delays = _tap_delays(rng, P, mean_gap)
            power = np.exp(-delays / decay)
            gains = (rng.normal(size=P) + 1j * rng.normal(size=P)) * np.sqrt(power / 2)
            base[m, a] = np.abs(static + 1.5 * _frequency_response(gains, delays, freqs))
    return AMPLITUDE_SCALE * base


def generate_synthetic(config: SynthConfig) -> tuple[Dataset, Dataset]:
    """Generate train/test CSI datasets from a seeded multipath model.

    Each location gets its own scatterer paths on top of a static room
    response. Every (session, location) visit rescales amplitudes by a
    log-normal drift factor, and every sample adds Gaussian noise clamped
    at zero. Train sessions are ``0..sessions_train-1``; test sessions follow.
    """
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    base = _base_responses(cfg, rng).reshape(cfg.M, cfg.S * cfg.A)

    def draw(split, per_loc, sessions, first_session):
        samples = []
        for m in range(cfg.M):
            drift = np.exp(rng.normal(0.0, cfg.session_drift_sigma, size=sessions))
            session_of = first_session + np.arange(per_loc) * sessions // per_loc
            for i in range(per_loc):
                sess = int(session_of[i])
                x = base[m] * drift[sess - first_session]
                x = x + rng.normal(0.0, cfg.noise_sigma, size=x.shape)
                samples.append(CsiSample(np.maximum(x, 0.0), m + 1, sess, split))
        return Dataset(tuple(samples), S=cfg.S, A=cfg.A, M=cfg.M)

    train = draw("train", cfg.train_per_loc, cfg.sessions_train, 0)
    test = draw("test", cfg.test_per_loc, cfg.sessions_test, cfg.sessions_train)
    return train, test


def minmax_scale(train: Dataset, *others: Dataset) -> list[Dataset]:
    """Scale every channel to [0, 1] using ranges fitted on ``train``.

    Test values outside the training range are clipped into [0, 1].
    """
    X = train.X
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    out = []
    for ds in (train, *others):
        scaled = np.clip((ds.X - lo) / span, 0.0, 1.0) if len(ds) else ds.X
        out.append(ds.with_samples(
            replace(s, channels=row) for s, row in zip(ds.samples, scaled)
        ))
    return out


# --------------------------------------------------------------------------- statistics


@dataclass(frozen=True, eq=False)
class ClassStats:
    """Per-class, per-channel training moments; row ``m - 1`` is location ``m``."""

    mean: np.ndarray
    std: np.ndarray

    @property
    def M(self) -> int:
        return self.mean.shape[0]


def class_stats(train: Dataset, floor: float = STD_FLOOR) -> ClassStats:
    """Population mean/std of every channel within each location.

    Only samples tagged ``train`` contribute.
    """
    X = train.X
    labels = train.labels
    is_train = np.array([s == "train" for s in train.splits], dtype=bool)
    mean = np.zeros((train.M, train.K))
    std = np.zeros((train.M, train.K))
    for m in range(1, train.M + 1):
        rows = X[is_train & (labels == m)]
        if rows.shape[0] < 2:
            raise DatasetError(f"location {m} has {rows.shape[0]} training samples; need >= 2")
        mean[m - 1] = rows.mean(axis=0)
        std[m - 1] = np.maximum(rows.std(axis=0), floor)
    return ClassStats(mean, std)


def adjacent_subcarrier_correlation(dataset: Dataset) -> np.ndarray:
    """Pearson correlation of subcarriers (i, i+1), averaged over antenna pairs.

    Returns S-1 coefficients. A pair whose columns have zero variance in any
    antenna block is reported as NaN.
    """
    if len(dataset) < 2:
        raise DatasetError("need at least 2 samples")
    X = dataset.X.reshape(len(dataset), dataset.A, dataset.S)
    centered = X - X.mean(axis=0)
    ss = np.sqrt((centered**2).sum(axis=0))
    num = (centered[:, :, :-1] * centered[:, :, 1:]).sum(axis=0)
    den = ss[:, :-1] * ss[:, 1:]
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(den > 0, num / den, np.nan)
    r = np.clip(r, -1.0, 1.0)
    out = r.mean(axis=0)
    out[np.any(den == 0, axis=0)] = np.nan
    return out


def per_class_counts(dataset: Dataset) -> dict[int, int]:
    counts = {m: 0 for m in range(1, dataset.M + 1)}
    for s in dataset.samples:
        counts[s.location_id] += 1
    return counts


__all__ = [
    "CsiSample", "Dataset", "DatasetError", "SynthConfig", "ClassStats",
    "load_csv", "save_csv", "generate_synthetic", "class_stats",
    "adjacent_subcarrier_correlation", "minmax_scale", "from_arrays",
    "per_class_counts",
]
