"""
Frequency-scaling augmentation
==============================

``divide(d)`` stretches a random 1/d sub-window over the full window, so every
rhythm slows by d. ``multiply(k)`` compresses the window by k and tiles the
result, so rhythms speed up by k. The default grid (one divide, nine
multiplies) grows a corpus elevenfold.
"""

import sys
import tempfile
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from ppgssl.augment import AugmentationSpec, divide, expand_dataset, multiply
from ppgssl.synthetic import tone_windows

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="ppgssl_demo_"))
fs, T = 32, 256
t = np.arange(T) / fs
w = np.zeros((4, T))
w[0] = np.sin(2 * np.pi * 1.5 * t)  # 90 BPM

def peak_hz(x):
    spec = np.abs(np.fft.rfft(x - x.mean()))
    return np.fft.rfftfreq(len(x), 1 / fs)[np.argmax(spec)]

print(f"original: {peak_hz(w[0]):.2f} Hz")
print(f"divide 2: {peak_hz(divide(w, 2, np.random.default_rng(0))[0]):.2f} Hz")
for k in (1.2, 1.5, 2.0):
    print(f"multiply {k}: {peak_hz(multiply(w, k)[0]):.2f} Hz")

fig, axes = plt.subplots(3, 1, figsize=(8, 5), sharex=True)
for ax, (name, x) in zip(axes, [("original", w), ("divide 2", divide(w, 2, np.random.default_rng(0))), ("multiply 1.5", multiply(w, 1.5))]):
    ax.plot(t, x[0])
    ax.set_ylabel(name)
axes[-1].set_xlabel("time [s]")
fig.tight_layout()
out.mkdir(parents=True, exist_ok=True)
fig.savefig(out / "augmentation.png")

spec = AugmentationSpec.paper_default(rng_seed=0)
corpus = tone_windows(100, np.random.default_rng(1), labeled=False)
big = expand_dataset(corpus, spec)
print(f"{len(corpus)} windows -> {len(big)} (x{spec.expansion_factor})")
print("wrote", out / "augmentation.png")
