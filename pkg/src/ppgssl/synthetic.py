"""Synthetic PPG + accelerometer data with planted heart rates.

Used by the tests and the demo scripts; no real dataset is needed to run
the pipeline end to end.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import FS, SHIFT_S, WIN_LEN, WIN_S, SubjectRecording, Source, WindowedDataset, n_windows


def _pulse_wave(phase):
    # systolic peak plus a weaker dicrotic harmonic
    return np.sin(phase) + 0.35 * np.sin(2 * phase + 0.8) + 0.1 * np.sin(3 * phase + 1.9)


def tone_windows(
    n: int,
    rng: np.random.Generator,
    f_lo: float = 1.0,
    f_hi: float = 3.0,
    subject: str = "syn",
    noise: float = 0.05,
    win_len: int = WIN_LEN,
    fs: float = FS,
    labeled: bool = True,
) -> WindowedDataset:
    """Windows whose PPG channel is a pulse wave at a constant rate f (Hz) and
    whose label is f * 60 BPM. Accelerometer axes carry unrelated motion tones."""
    t = np.arange(win_len) / fs
    f = rng.uniform(f_lo, f_hi, size=n)
    phase0 = rng.uniform(0, 2 * np.pi, size=n)
    data = np.empty((n, 4, win_len), np.float32)
    data[:, 0] = _pulse_wave(2 * np.pi * f[:, None] * t[None, :] + phase0[:, None])
    for ax in range(1, 4):
        fm = rng.uniform(0.2, 2.5, size=n)
        amp = rng.uniform(0.1, 1.0, size=n)
        data[:, ax] = amp[:, None] * np.sin(2 * np.pi * fm[:, None] * t[None, :] + rng.uniform(0, 6.3, n)[:, None])
    data += noise * rng.standard_normal(data.shape).astype(np.float32)
    labels = f * 60.0 if labeled else np.full(n, np.nan)
    return WindowedDataset(data, np.full(n, subject), labels, fs=fs)


def synthetic_recording(
    subject_id: str,
    duration_s: float,
    rng: np.random.Generator,
    hr_range=(60.0, 170.0),
    labeled: bool = True,
    fs_ppg: float = 64.0,
    fs_acc: float = 32.0,
    noise: float = 0.05,
) -> SubjectRecording:
    """A recording at native multi-rate sampling with a slowly drifting HR.

    Labels are the mean instantaneous HR of each 8 s window at 2 s shift.
    """
    n_ppg = int(duration_s * fs_ppg)
    t = np.arange(n_ppg) / fs_ppg
    lo, hi = hr_range
    # smooth random walk of the instantaneous rate in BPM
    knots = rng.uniform(lo, hi, size=max(2, int(duration_s // 30) + 2))
    hr = np.interp(t, np.linspace(0, duration_s, len(knots)), knots)
    phase = 2 * np.pi * np.cumsum(hr / 60.0) / fs_ppg
    ppg = _pulse_wave(phase) + noise * rng.standard_normal(n_ppg)
    n_acc = int(duration_s * fs_acc)
    ta = np.arange(n_acc) / fs_acc
    acc = np.stack(
        [rng.uniform(0.1, 1) * np.sin(2 * np.pi * rng.uniform(0.2, 2.5) * ta + rng.uniform(0, 6.3)) for _ in range(3)],
        axis=1,
    )
    acc += noise * rng.standard_normal(acc.shape)
    labels = None
    if labeled:
        count = n_windows(duration_s, WIN_S, SHIFT_S)
        win, shift = int(WIN_S * fs_ppg), int(SHIFT_S * fs_ppg)
        labels = np.array([hr[i * shift : i * shift + win].mean() for i in range(count)])
    return SubjectRecording(
        subject_id, ppg, fs_ppg, acc, fs_acc, labels, Source.DALIA if labeled else Source.UNLABELED
    )


def write_dalia_like(root, n_subjects: int, duration_s: float, seed: int = 0) -> Path:
    """Write per-subject pickles in the PPG-DaLiA layout (``S{i}/S{i}.pkl``)."""
    import pickle

    root = Path(root)
    rng = np.random.default_rng(seed)
    for i in range(1, n_subjects + 1):
        rec = synthetic_recording(f"S{i}", duration_s, rng)
        d = root / f"S{i}"
        d.mkdir(parents=True, exist_ok=True)
        payload = {
            "subject": f"S{i}",
            "signal": {"wrist": {"BVP": rec.ppg[:, None], "ACC": rec.acc}},
            "label": rec.hr_labels,
        }
        with open(d / f"S{i}.pkl", "wb") as f:
            pickle.dump(payload, f)
    return root


def write_e4_session(path, rec: SubjectRecording, start_ts: float = 1.6e9) -> Path:
    """Write an Empatica E4 style CSV session (BVP.csv, ACC.csv)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    np.savetxt(path / "BVP.csv", np.concatenate([[start_ts, rec.fs_ppg], rec.ppg]), fmt="%.6f")
    acc_rows = np.vstack([np.full(3, start_ts), np.full(3, rec.fs_acc), rec.acc])
    np.savetxt(path / "ACC.csv", acc_rows, delimiter=",", fmt="%.6f")
    return path
