"""Frequency-scaling augmentations for pre-training windows.

``divide`` stretches a random sub-window back to full length, dividing the
apparent heart rate; ``multiply`` compresses the window in time and tiles it
back to full length, multiplying the apparent heart rate. Labels are never
touched: these transforms are meant for unlabeled pre-training data only.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

import numpy as np

from .data import SignalWindow, WindowedDataset


@dataclass(frozen=True)
class Divide:
    d: int = 2

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2:
            raise ValueError(f"divide factor must be an integer >= 2, got {self.d}")

    def __str__(self):
        return f"divide:{self.d}"


@dataclass(frozen=True)
class Multiply:
    k: float

    def __post_init__(self):
        if not self.k > 1:
            raise ValueError(f"multiply factor must be > 1, got {self.k}")

    def __str__(self):
        return f"multiply:{self.k:g}"


def multiply_grid(lo: float, hi: float, step: float) -> list[float]:
    """Inclusive factor grid, e.g. (1.2, 2.0, 0.1) -> [1.2, 1.3, ..., 2.0]."""
    if step <= 0 or hi < lo:
        raise ValueError(f"bad multiply grid {lo}-{hi}:{step}")
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return [round(lo + i * step, 10) for i in range(n)]


@dataclass
class AugmentationSpec:
    transforms: list = field(default_factory=list)
    rng_seed: int = 0

    @property
    def expansion_factor(self) -> int:
        return 1 + len(self.transforms)

    @classmethod
    def paper_default(cls, rng_seed: int = 0) -> "AugmentationSpec":
        return cls([Divide(2)] + [Multiply(k) for k in multiply_grid(1.2, 2.0, 0.1)], rng_seed)

    @classmethod
    def parse(cls, grid: str, rng_seed: int = 0) -> "AugmentationSpec":
        """Parse ``"divide:2,multiply:1.2-2.0:0.1"``; ``multiply:1.5`` gives one factor."""
        transforms = []
        for item in filter(None, (s.strip() for s in grid.split(","))):
            kind, _, arg = item.partition(":")
            kind = kind.strip().lower()
            if kind == "divide":
                transforms.append(Divide(int(arg or 2)))
            elif kind == "multiply":
                m = re.fullmatch(r"\s*([\d.]+)\s*-\s*([\d.]+)\s*:\s*([\d.]+)\s*", arg)
                if m:
                    transforms += [Multiply(k) for k in multiply_grid(*map(float, m.groups()))]
                else:
                    transforms.append(Multiply(float(arg)))
            else:
                raise ValueError(f"unknown transform {kind!r} in grid {grid!r}")
        return cls(transforms, rng_seed)

    def __str__(self):
        return ",".join(map(str, self.transforms))


def _sample_at(x: np.ndarray, pos: np.ndarray) -> np.ndarray:
    # linear interpolation of every channel at fractional sample positions
    n = x.shape[-1]
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n - 1)
    frac = pos - lo
    return x[..., lo] * (1 - frac) + x[..., hi] * frac


def _as_array(window):
    if isinstance(window, SignalWindow):
        return np.asarray(window.data, dtype=np.float64)
    return np.asarray(window, dtype=np.float64)


def _wrap(window, out):
    if isinstance(window, SignalWindow):
        return replace(window, data=out.astype(np.float32))
    return out.astype(np.float32)


def divide(window, d: int, rng: np.random.Generator):
    """Take a random contiguous T/d section and stretch it back to T samples."""
    x = _as_array(window)
    T = x.shape[-1]
    seg = T // d
    if seg < 2:
        raise ValueError(f"section length T/d = {T}/{d} is shorter than 2 samples")
    start = int(rng.integers(0, T - seg + 1))
    pos = start + np.arange(T) * (seg / T)
    return _wrap(window, _sample_at(x, pos))


def multiply(window, k: float):
    """Compress the window to round(T/k) samples and tile it back to T."""
    if not k > 1:
        raise ValueError(f"multiply factor must be > 1, got {k}")
    x = _as_array(window)
    T = x.shape[-1]
    n_c = int(round(T / k))
    if n_c < 8:
        raise ValueError(f"compressed length round({T}/{k}) = {n_c} < 8")
    compressed = _sample_at(x, np.minimum(np.arange(n_c) * k, T - 1))
    reps = -(-T // n_c)
    return _wrap(window, np.tile(compressed, reps)[..., :T])


def _window_rng(seed: int, index: int) -> np.random.Generator:
    # counter-based: the offset drawn for window i does not depend on any other window
    return np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, index]))


def apply_transform(t, x: np.ndarray, seed: int, index: int) -> np.ndarray:
    if isinstance(t, Divide):
        return divide(x, t.d, _window_rng(seed, index))
    if isinstance(t, Multiply):
        return multiply(x, t.k)
    raise TypeError(f"unknown transform {t!r}")


def expand_dataset(ds: WindowedDataset, spec: AugmentationSpec) -> WindowedDataset:
    """Originals first, then one transformed copy of the whole set per transform."""
    parts, sids, labels = [ds.data], [ds.subject_ids], [ds.labels]
    for ti, t in enumerate(spec.transforms):
        out = np.empty_like(ds.data)
        for i in range(len(ds)):
            out[i] = apply_transform(t, ds.data[i], spec.rng_seed + ti, i)
        parts.append(out)
        sids.append(ds.subject_ids)
        labels.append(ds.labels)
    meta = dict(ds.meta)
    if spec.transforms:
        meta["augmentation"] = {"grid": str(spec), "seed": spec.rng_seed, "factor": spec.expansion_factor}
    return replace(
        ds, data=np.concatenate(parts), subject_ids=np.concatenate(sids), labels=np.concatenate(labels), meta=meta
    )
