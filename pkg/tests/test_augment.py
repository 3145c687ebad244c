import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FS, T, dominant_bin, tone
from ppgssl.augment import (
    AugmentationSpec,
    Divide,
    Multiply,
    divide,
    expand_dataset,
    multiply,
    multiply_grid,
)
from ppgssl.data import SignalWindow, WindowedDataset

GRID = multiply_grid(1.2, 2.0, 0.1)


def _window(f):
    return np.tile(tone(f), (4, 1))


def test_grid_has_nine_factors():
    assert GRID == [1.2, 1.3, 1.4, 1.5, 1.6, 1.7, 1.8, 1.9, 2.0]


def test_paper_spec_factor():
    spec = AugmentationSpec.paper_default()
    assert len(spec.transforms) == 10
    assert spec.expansion_factor == 11


def test_parse_grid_string():
    spec = AugmentationSpec.parse("divide:2,multiply:1.2-2.0:0.1", 7)
    assert spec.transforms == AugmentationSpec.paper_default().transforms
    assert spec.rng_seed == 7
    assert AugmentationSpec.parse("multiply:1.5").transforms == [Multiply(1.5)]
    with pytest.raises(ValueError):
        AugmentationSpec.parse("shift:3")


def test_divide_halves_frequency():
    y = divide(_window(2.0), 2, np.random.default_rng(0))
    assert abs(dominant_bin(y[0]) - 1.0 * T / FS) <= 1


def test_multiply_doubles_frequency():
    y = multiply(_window(1.0), 2.0)
    assert abs(dominant_bin(y[0]) - 2.0 * T / FS) <= 1


@pytest.mark.parametrize("seed", range(5))
def test_divide_shape_and_determinism(seed, rng):
    x = rng.standard_normal((4, T))
    a = divide(x, 2, np.random.default_rng(seed))
    b = divide(x, 2, np.random.default_rng(seed))
    assert a.shape == (4, T)
    np.testing.assert_array_equal(a, b)


def test_divide_rejects_tiny_section():
    with pytest.raises(ValueError):
        divide(np.zeros((4, 3)), 2, np.random.default_rng(0))


def test_multiply_compressed_length_before_tiling():
    # k=1.5: round(256/1.5) = 171 samples, tiled, so sample 171 restarts the compressed segment
    x = np.tile(np.arange(T, dtype=float), (4, 1))
    y = multiply(x, 1.5)
    assert y.shape == (4, T)
    assert y[0, 171] == y[0, 0] == 0
    np.testing.assert_allclose(y[0, 1:4], [1.5, 3.0, 4.5])


def test_multiply_near_identity():
    x = _window(1.0)
    y = multiply(x, 1.0001)
    np.testing.assert_allclose(y, x, atol=0.01)


def test_multiply_rejects_bad_factors():
    with pytest.raises(ValueError):
        multiply(_window(1.0), 1.0)
    with pytest.raises(ValueError):
        multiply(_window(1.0), 40.0)  # round(256/40) = 6 < 8


def test_signal_window_label_untouched():
    w = SignalWindow(_window(1.0).astype(np.float32), "S3", 88.0)
    for out in (multiply(w, 1.7), divide(w, 2, np.random.default_rng(1))):
        assert isinstance(out, SignalWindow)
        assert out.label == 88.0 and out.subject_id == "S3"


@settings(max_examples=40, deadline=None)
@given(f=st.floats(0.5, 7.9), k=st.sampled_from(GRID), phase=st.floats(0, 6.28))
def test_multiply_tone_property(f, k, phase):
    if f >= 16 / max(GRID):
        f = f % (16 / max(GRID)) + 0.5
    x = np.tile(tone(f, phase=phase), (4, 1))
    y = multiply(x, k)
    for c in range(4):
        assert abs(dominant_bin(y[c]) - k * f * T / FS) <= 1


@settings(max_examples=40, deadline=None)
@given(f=st.floats(0.5, 7.9), seed=st.integers(0, 10_000))
def test_divide_tone_property(f, seed):
    x = np.tile(tone(f), (4, 1))
    y = divide(x, 2, np.random.default_rng(seed))
    for c in range(4):
        assert abs(dominant_bin(y[c]) - f / 2 * T / FS) <= 1


def test_identical_warp_on_all_channels(rng):
    base = rng.standard_normal(T)
    x = np.stack([base, 2 * base, -base, base + 1])
    for y in (multiply(x, 1.3), divide(x, 2, np.random.default_rng(3))):
        np.testing.assert_allclose(y[1], 2 * y[0], rtol=1e-5, atol=1e-5)
        np.testing.assert_allclose(y[2], -y[0], rtol=1e-5, atol=1e-5)
        np.testing.assert_allclose(y[3], y[0] + 1, rtol=1e-5, atol=1e-5)


def _corpus(n, rng, labels=None):
    return WindowedDataset(
        rng.standard_normal((n, 4, T)).astype(np.float32),
        [f"S{i % 3}" for i in range(n)],
        np.full(n, np.nan) if labels is None else labels,
    )


def test_expand_paper_grid(rng):
    out = expand_dataset(_corpus(100, rng), AugmentationSpec.paper_default())
    assert len(out) == 1100


def test_expand_empty_spec_is_copy(rng):
    ds = _corpus(10, rng)
    out = expand_dataset(ds, AugmentationSpec([]))
    assert len(out) == 10
    np.testing.assert_array_equal(out.data, ds.data)


def test_expand_order_and_labels(rng):
    labels = rng.uniform(60, 120, 6)
    ds = _corpus(6, rng, labels)
    spec = AugmentationSpec([Multiply(1.5), Divide(2)], rng_seed=3)
    out = expand_dataset(ds, spec)
    np.testing.assert_array_equal(out.data[:6], ds.data)
    np.testing.assert_array_equal(out.data[6:12], np.stack([multiply(w, 1.5) for w in ds.data]))
    np.testing.assert_array_equal(out.labels, np.tile(ds.labels, 3))
    np.testing.assert_array_equal(out.subject_ids, np.tile(ds.subject_ids, 3))


def test_expand_deterministic(rng):
    ds = _corpus(8, rng)
    spec = AugmentationSpec.paper_default(rng_seed=11)
    a, b = expand_dataset(ds, spec), expand_dataset(ds, spec)
    np.testing.assert_array_equal(a.data, b.data)
    c = expand_dataset(ds, AugmentationSpec.paper_default(rng_seed=12))
    assert not np.array_equal(a.data[8:16], c.data[8:16])


def test_divide_offset_independent_of_corpus_size(rng):
    ds = _corpus(8, rng)
    spec = AugmentationSpec([Divide(2)], rng_seed=5)
    full = expand_dataset(ds, spec)
    part = expand_dataset(ds.select(slice(0, 4)), spec)
    np.testing.assert_array_equal(full.data[8:12], part.data[4:8])
