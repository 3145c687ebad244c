"""Dataset ingestion: loading, resampling, windowing, normalization and the
on-disk window container."""

from __future__ import annotations

import enum
import io
import json
import logging
import os
import pickle
import warnings
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

log = logging.getLogger(__name__)

FS = 32
WIN_S = 8
SHIFT_S = 2
WIN_LEN = WIN_S * FS
CHANNELS = ("ppg", "acc_x", "acc_y", "acc_z")

HR_MIN, HR_MAX = 20.0, 250.0


class Source(str, enum.Enum):
    DALIA = "dalia"
    WESAD = "wesad"
    UNLABELED = "unlabeled"


class Provenance(str, enum.Enum):
    PRETRAIN_CORPUS = "pretrain_corpus"
    TRAIN_SPLIT = "train_split"


class LoadError(Exception):
    pass


class ContainerFormatError(Exception):
    pass


class NormalizationStateError(Exception):
    pass


@dataclass
class SubjectRecording:
    subject_id: str
    ppg: np.ndarray
    fs_ppg: float
    acc: np.ndarray  # (n, 3): x, y, z
    fs_acc: float
    hr_labels: np.ndarray | None = None
    source: Source = Source.UNLABELED

    def __post_init__(self):
        self.ppg = np.asarray(self.ppg, dtype=np.float64).ravel()
        self.acc = np.asarray(self.acc, dtype=np.float64)
        if self.acc.ndim != 2 or self.acc.shape[1] != 3:
            raise ValueError(f"acc must have shape (n, 3), got {self.acc.shape}")
        if self.hr_labels is not None:
            self.hr_labels = np.asarray(self.hr_labels, dtype=np.float64).ravel()
            bad = ~np.isfinite(self.hr_labels) | (self.hr_labels <= HR_MIN) | (self.hr_labels >= HR_MAX)
            if bad.any():
                raise ValueError(f"{self.subject_id}: {int(bad.sum())} HR labels outside ({HR_MIN}, {HR_MAX})")

    @property
    def acc_x(self):
        return self.acc[:, 0]

    @property
    def acc_y(self):
        return self.acc[:, 1]

    @property
    def acc_z(self):
        return self.acc[:, 2]

    @property
    def duration_s(self) -> float:
        return min(len(self.ppg) / self.fs_ppg, len(self.acc) / self.fs_acc)

    def resampled(self, fs: float = FS) -> "SubjectRecording":
        """Return a copy with every stream at `fs`."""
        ppg = resample(self.ppg, self.fs_ppg, fs)
        acc = np.stack([resample(self.acc[:, i], self.fs_acc, fs) for i in range(3)], axis=1)
        return replace(self, ppg=ppg, fs_ppg=fs, acc=acc, fs_acc=fs)


@dataclass
class SignalWindow:
    data: np.ndarray  # (4, 256), channel order CHANNELS
    subject_id: str
    label: float | None = None


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    provenance: Provenance = Provenance.TRAIN_SPLIT

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        self.provenance = Provenance(self.provenance)
        if (self.std <= 0).any():
            raise ValueError("std must be strictly positive")

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "provenance": self.provenance.value}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.array(d["mean"]), np.array(d["std"]), Provenance(d["provenance"]))

    def __eq__(self, other):
        if not isinstance(other, NormStats):
            return NotImplemented
        return (
            self.provenance == other.provenance
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.std, other.std)
        )


@dataclass
class WindowedDataset:
    """Windows stored column-wise: ``data`` is (N, 4, 256) float32, ``labels`` is
    (N,) with NaN where a window has no HR label."""

    data: np.ndarray
    subject_ids: np.ndarray
    labels: np.ndarray
    stats: NormStats | None = None
    normalized: bool = False
    fs: float = FS
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or self.data.shape[1] != len(CHANNELS):
            raise ValueError(f"window data must be (N, 4, T), got {self.data.shape}")
        self.subject_ids = np.asarray(self.subject_ids, dtype=str).reshape(-1)
        self.labels = np.asarray(self.labels, dtype=np.float32).reshape(-1)
        n = len(self.data)
        if len(self.subject_ids) != n or len(self.labels) != n:
            raise ValueError("data, subject_ids and labels must have the same length")
        if self.normalized and self.stats is None:
            raise ValueError("a normalized dataset must carry its stats")

    def __len__(self):
        return len(self.data)

    def __getitem__(self, i) -> SignalWindow:
        lab = float(self.labels[i])
        return SignalWindow(self.data[i], str(self.subject_ids[i]), None if np.isnan(lab) else lab)

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def windows(self) -> list[SignalWindow]:
        return list(self)

    @property
    def subjects(self) -> list[str]:
        return list(dict.fromkeys(self.subject_ids.tolist()))

    @property
    def has_labels(self) -> bool:
        return len(self) > 0 and not np.isnan(self.labels).any()

    def select(self, mask_or_idx) -> "WindowedDataset":
        return replace(
            self,
            data=self.data[mask_or_idx],
            subject_ids=self.subject_ids[mask_or_idx],
            labels=self.labels[mask_or_idx],
        )

    def for_subjects(self, subjects) -> "WindowedDataset":
        return self.select(np.isin(self.subject_ids, list(subjects)))

    @classmethod
    def empty(cls, win_len: int = WIN_LEN) -> "WindowedDataset":
        return cls(np.zeros((0, len(CHANNELS), win_len), np.float32), np.array([], str), np.array([], np.float32))

    @classmethod
    def concat(cls, parts: list["WindowedDataset"]) -> "WindowedDataset":
        parts = [p for p in parts if p is not None]
        if not parts:
            return cls.empty()
        if len({p.normalized for p in parts}) > 1:
            raise NormalizationStateError("cannot concatenate normalized and raw datasets")
        stats = parts[0].stats
        if parts[0].normalized and any(p.stats != stats for p in parts):
            raise NormalizationStateError("cannot concatenate datasets normalized with different stats")
        return cls(
            np.concatenate([p.data for p in parts]),
            np.concatenate([p.subject_ids for p in parts]),
            np.concatenate([p.labels for p in parts]),
            stats=stats if parts[0].normalized else None,
            normalized=parts[0].normalized,
            fs=parts[0].fs,
        )


# --------------------------------------------------------------------- loading


def _read_pickle(path: Path) -> dict:
    try:
        with open(path, "rb") as f:
            return pickle.load(f, encoding="latin1")
    except (pickle.UnpicklingError, EOFError, AttributeError, ValueError) as e:
        raise LoadError(f"corrupt archive {path}: {e}") from e


def _find_pickle(path: Path) -> Path:
    if path.is_file():
        return path
    candidates = sorted(path.glob("*.pkl"))
    preferred = [c for c in candidates if c.stem == path.name]
    if preferred:
        return preferred[0]
    if not candidates:
        raise LoadError(f"no .pkl archive in {path}")
    return candidates[0]


def _wrist_streams(d: dict, where: Path) -> tuple[np.ndarray, np.ndarray]:
    try:
        wrist = d["signal"]["wrist"]
    except (KeyError, TypeError):
        raise LoadError(f"{where}: missing field signal/wrist") from None
    if "BVP" not in wrist:
        raise LoadError(f"{where}: missing channel ppg (signal/wrist/BVP)")
    if "ACC" not in wrist:
        raise LoadError(f"{where}: missing channel acc_x")
    acc = np.asarray(wrist["ACC"], dtype=np.float64)
    if acc.ndim == 1:
        acc = acc[:, None]
    for i, name in enumerate(CHANNELS[1:]):
        if acc.shape[1] <= i:
            raise LoadError(f"{where}: missing channel {name}")
    return np.asarray(wrist["BVP"], dtype=np.float64).ravel(), acc[:, :3]


def _read_e4_csv(path: Path) -> tuple[np.ndarray, float]:
    # Empatica E4 export: row 0 start timestamp, row 1 sample rate, then samples
    raw = np.loadtxt(path, delimiter=",", ndmin=2)
    if raw.shape[0] < 3:
        raise LoadError(f"corrupt archive {path}: fewer than 3 rows")
    return raw[2:], float(raw[1, 0])


def load_subject(path, source: Source | str) -> SubjectRecording:
    """Load one subject at native sample rates.

    DaLiA and WESAD are read from the authors' per-subject pickles (wrist BVP
    at 64 Hz, wrist ACC at 32 Hz). ``UNLABELED`` reads an Empatica E4 CSV
    session directory (``BVP.csv`` + ``ACC.csv``).
    """
    try:
        source = Source(source)
    except ValueError:
        raise LoadError(f"unknown source kind {source!r}") from None
    path = Path(path)
    if not path.exists():
        raise LoadError(f"{path} does not exist")

    if source is Source.UNLABELED:
        if not path.is_dir():
            raise LoadError(f"{path}: expected an E4 session directory")
        if not (path / "BVP.csv").exists():
            raise LoadError(f"{path}: missing channel ppg (BVP.csv)")
        if not (path / "ACC.csv").exists():
            raise LoadError(f"{path}: missing channel acc_x (ACC.csv)")
        ppg, fs_ppg = _read_e4_csv(path / "BVP.csv")
        acc, fs_acc = _read_e4_csv(path / "ACC.csv")
        for i, name in enumerate(CHANNELS[1:]):
            if acc.shape[1] <= i:
                raise LoadError(f"{path}: missing channel {name}")
        return SubjectRecording(path.name, ppg.ravel(), fs_ppg, acc[:, :3], fs_acc, None, source)

    pkl = _find_pickle(path)
    d = _read_pickle(pkl)
    if not isinstance(d, dict):
        raise LoadError(f"corrupt archive {pkl}: top level is {type(d).__name__}")
    ppg, acc = _wrist_streams(d, pkl)
    subject = str(d.get("subject", pkl.stem))
    labels = None
    if source is Source.DALIA:
        if "label" not in d:
            raise LoadError(f"{pkl}: missing field label")
        labels = np.asarray(d["label"], dtype=np.float64).ravel()
    # WESAD labels are affective states, not HR: dropped on purpose
    return SubjectRecording(subject, ppg, 64.0, acc, 32.0, labels, source)


def find_subjects(root, source: Source | str) -> list[Path]:
    """Subject archive paths under a dataset root, in natural order."""
    root = Path(root)
    source = Source(source)
    if source is Source.UNLABELED:
        found = sorted(p.parent for p in root.rglob("BVP.csv"))
    else:
        found = sorted({p.parent for p in root.glob("S*/S*.pkl")} | {p for p in root.glob("S*.pkl")})

    def key(p: Path):
        digits = "".join(c for c in p.stem if c.isdigit())
        return (int(digits) if digits else 0, p.name)

    return sorted(found, key=key)


# ------------------------------------------------------------------ resampling


def resample(signal, fs_in: float, fs_out: float) -> np.ndarray:
    """Polyphase resampling with an anti-alias FIR.

    Output length is ``round(len * fs_out / fs_in)``. The result is divided by
    the resampled all-ones signal so constants come through exactly, including
    for non-integer ratios where the polyphase branches have unequal DC gain.
    """
    if fs_in <= 0 or fs_out <= 0:
        raise ValueError(f"sample rates must be positive, got fs_in={fs_in}, fs_out={fs_out}")
    x = np.asarray(signal, dtype=np.float64).ravel()
    n_out = int(round(len(x) * fs_out / fs_in))
    if len(x) == 0 or n_out == 0:
        return np.zeros(n_out)
    if fs_in == fs_out:
        return x.copy()
    ratio = Fraction(fs_out / fs_in).limit_denominator(1000)
    up, down = ratio.numerator, ratio.denominator
    y = resample_poly(x, up, down, padtype="line")
    gain = resample_poly(np.ones_like(x), up, down, padtype="line")
    y = y / gain
    if len(y) < n_out:
        y = np.pad(y, (0, n_out - len(y)), mode="edge")
    return y[:n_out]


# ------------------------------------------------------------------- windowing


def n_windows(duration_s: float, win_s: float = WIN_S, shift_s: float = SHIFT_S) -> int:
    if duration_s < win_s:
        return 0
    return int(np.floor((duration_s - win_s) / shift_s + 1e-9)) + 1


def segment_windows(rec: SubjectRecording, win_s=WIN_S, shift_s=SHIFT_S, fs=FS) -> WindowedDataset:
    if rec.fs_ppg != fs or rec.fs_acc != fs:
        raise ValueError(f"streams must be resampled to {fs} Hz first (got {rec.fs_ppg}, {rec.fs_acc})")
    win, shift = int(round(win_s * fs)), int(round(shift_s * fs))
    n_samp = min(len(rec.ppg), len(rec.acc))
    count = n_windows(n_samp / fs, win_s, shift_s)
    if count == 0:
        warnings.warn(f"{rec.subject_id}: recording shorter than one {win_s} s window", stacklevel=2)
        return WindowedDataset.empty(win)

    labels = np.full(count, np.nan)
    if rec.hr_labels is not None:
        if len(rec.hr_labels) != count:
            log.info("%s: %d windows vs %d labels, truncating to shorter", rec.subject_id, count, len(rec.hr_labels))
            count = min(count, len(rec.hr_labels))
            labels = labels[:count]
        labels[:] = rec.hr_labels[:count]

    stacked = np.concatenate([rec.ppg[:n_samp, None], rec.acc[:n_samp]], axis=1).T  # (4, n)
    starts = np.arange(count) * shift
    idx = starts[:, None] + np.arange(win)[None, :]
    data = stacked[:, idx].transpose(1, 0, 2)
    return WindowedDataset(data, np.full(count, rec.subject_id), labels, fs=fs)


def ingest_recording(rec: SubjectRecording, fs=FS) -> WindowedDataset:
    return segment_windows(rec.resampled(fs), fs=fs)


# --------------------------------------------------------------- normalization


def compute_norm_stats(datasets, provenance: Provenance | str = Provenance.TRAIN_SPLIT) -> NormStats:
    if isinstance(datasets, WindowedDataset):
        datasets = [datasets]
    n = sum(len(d) for d in datasets)
    if n == 0:
        raise ValueError("cannot compute normalization stats from zero windows")
    # accumulate in float64, per channel, without concatenating the corpora
    count = 0
    s = np.zeros(len(CHANNELS))
    for d in datasets:
        s += d.data.astype(np.float64).sum(axis=(0, 2))
        count += d.data.shape[0] * d.data.shape[2]
    mean = s / count
    ss = np.zeros(len(CHANNELS))
    for d in datasets:
        ss += ((d.data.astype(np.float64) - mean[None, :, None]) ** 2).sum(axis=(0, 2))
    std = np.sqrt(ss / count)
    flat = ~(std > 0)
    if flat.any():
        names = [CHANNELS[i] for i in np.flatnonzero(flat)]
        warnings.warn(f"zero-variance channel(s) {names}: using std=1", stacklevel=2)
        std[flat] = 1.0
    return NormStats(mean, std, Provenance(provenance))


def apply_zscore(ds: WindowedDataset, stats: NormStats) -> WindowedDataset:
    if ds.normalized:
        raise NormalizationStateError("dataset is already normalized")
    data = (ds.data.astype(np.float64) - stats.mean[None, :, None]) / stats.std[None, :, None]
    return replace(ds, data=data.astype(np.float32), stats=stats, normalized=True)


def denormalize(ds: WindowedDataset) -> WindowedDataset:
    if not ds.normalized:
        raise NormalizationStateError("dataset is not normalized")
    st = ds.stats
    data = ds.data.astype(np.float64) * st.std[None, :, None] + st.mean[None, :, None]
    return replace(ds, data=data.astype(np.float32), stats=None, normalized=False)


# ------------------------------------------------------------------- container

MAGIC = b"PPGWIN\x00\x00"
CONTAINER_VERSION = 1


def export_container(ds: WindowedDataset, path) -> Path:
    """Write ``ds`` atomically (temp file + rename)."""
    path = Path(path)
    subjects = ds.subjects
    index = np.array([subjects.index(s) for s in ds.subject_ids], dtype=np.int32)
    header = {
        "version": CONTAINER_VERSION,
        "n_windows": len(ds),
        "channels": list(CHANNELS),
        "fs": ds.fs,
        "win_len": int(ds.data.shape[2]),
        "subjects": subjects,
        "normalized": ds.normalized,
        "stats": ds.stats.to_dict() if ds.stats is not None else None,
        "meta": ds.meta,
    }
    hbytes = json.dumps(header).encode()
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(len(hbytes).to_bytes(4, "little"))
        f.write(hbytes)
        for arr in (np.ascontiguousarray(ds.data, np.float32), index, ds.labels.astype(np.float32)):
            np.lib.format.write_array(f, arr, allow_pickle=False)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)
    return path


def read_container_header(path) -> dict:
    with open(path, "rb") as f:
        return _read_header(f, path)


def _read_header(f, path) -> dict:
    magic = f.read(len(MAGIC))
    if magic != MAGIC:
        raise ContainerFormatError(f"{path}: not a window container (bad magic)")
    n = int.from_bytes(f.read(4), "little")
    raw = f.read(n)
    if len(raw) != n:
        raise ContainerFormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ContainerFormatError(f"{path}: corrupt header") from e
    if header.get("version") != CONTAINER_VERSION:
        raise ContainerFormatError(f"{path}: container version {header.get('version')}, expected {CONTAINER_VERSION}")
    return header


def import_container(path) -> WindowedDataset:
    with open(path, "rb") as f:
        header = _read_header(f, path)
        body = io.BytesIO(f.read())
    try:
        data = np.lib.format.read_array(body, allow_pickle=False)
        index = np.lib.format.read_array(body, allow_pickle=False)
        labels = np.lib.format.read_array(body, allow_pickle=False)
    except (ValueError, EOFError) as e:
        raise ContainerFormatError(f"{path}: truncated or corrupt payload ({e})") from e
    if len(data) != header["n_windows"] or tuple(header["channels"]) != CHANNELS:
        raise ContainerFormatError(f"{path}: header does not match payload")
    subjects = np.array(header["subjects"], dtype=str)
    sids = subjects[index] if len(index) else np.array([], dtype=str)
    stats = NormStats.from_dict(header["stats"]) if header["stats"] else None
    return WindowedDataset(
        data, sids, labels, stats=stats, normalized=header["normalized"], fs=header["fs"], meta=header.get("meta", {})
    )


def load_containers(paths) -> WindowedDataset:
    return WindowedDataset.concat([import_container(p) for p in paths])
