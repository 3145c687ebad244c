import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ppgssl.evaluate import (
    PUBLISHED_MAE,
    SUBJECTS_DALIA,
    HRSeries,
    aggregate_report,
    clip_postprocess,
    mae,
    published_baselines,
    render_table,
    rolling_means,
    series_mae,
    write_report,
)


def naive_clip(p, history=10, tol=0.1):
    out = []
    for i, v in enumerate(p):
        if i >= history:
            m = float(np.mean(out[-history:]))
            v = min(max(v, m - tol * abs(m)), m + tol * abs(m))
        out.append(v)
    return np.array(out)


def clip(values, **kw):
    return clip_postprocess(HRSeries("s", values), **kw).predictions


def test_clip_examples():
    assert clip([100.0] * 10 + [115.0])[-1] == pytest.approx(110.0)
    assert clip([100.0] * 10 + [105.0])[-1] == 105.0
    assert clip([100.0] * 10 + [80.0])[-1] == pytest.approx(90.0)
    assert np.array_equal(clip([72.0] * 30), np.full(30, 72.0))


def test_clip_warmup_passthrough():
    p = [50.0, 200.0, 60.0, 180.0, 90.0, 100.0, 40.0, 220.0, 70.0, 130.0]
    assert np.array_equal(clip(p), p)


def test_clip_uses_clipped_history():
    p = [100.0] * 10 + [200.0, 200.0]
    out = clip(p)
    assert out[10] == pytest.approx(110.0)
    assert out[11] == pytest.approx(1.1 * np.mean([100.0] * 9 + [110.0]))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(30, 220), min_size=1, max_size=60), st.integers(1, 12))
def test_clip_matches_naive_oracle(values, history):
    assert np.allclose(clip(values, history=history), naive_clip(values, history), rtol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(30, 220), min_size=11, max_size=60))
def test_clip_band_and_idempotence(values):
    out = clip(values)
    m = rolling_means(out, 10)
    tail = out[10:]
    assert np.all(tail <= m * 1.1 + 1e-9) and np.all(tail >= m * 0.9 - 1e-9)
    assert np.allclose(clip(out), out, rtol=1e-12, atol=0)


def test_clip_argument_checks():
    with pytest.raises(ValueError):
        clip([1.0], history=0)
    with pytest.raises(ValueError):
        clip([1.0], tol=1.5)


def test_mae_examples():
    assert mae([80, 90], [84, 88]) == 3.0
    assert mae([70], [70]) == 0.0
    with pytest.raises(ValueError):
        mae([1, 2], [1])
    with pytest.raises(ValueError):
        mae([], [])


def test_series_requires_labels():
    with pytest.raises(ValueError, match="labels"):
        series_mae(HRSeries("s", [1.0]))
    with pytest.raises(ValueError):
        HRSeries("s", [1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        HRSeries("s", [np.nan])


def test_series_csv_roundtrip(tmp_path):
    s = HRSeries("S3", [70.123456789, 80.5], [71.0, 79.0])
    s.save(tmp_path / "S3.pred.csv")
    back = HRSeries.load(tmp_path / "S3.pred.csv")
    assert back.subject_id == "S3"
    assert np.array_equal(back.predictions, s.predictions) and np.array_equal(back.labels, s.labels)


def test_report_mean_and_order():
    r = aggregate_report({"S10": 3.0, "S2": 1.0, "S1": 2.0})
    assert list(r.per_subject_mae) == ["S1", "S2", "S10"]
    assert r.mean_mae == 2.0
    with pytest.raises(ValueError):
        aggregate_report({})


def test_published_table_shape():
    for row in PUBLISHED_MAE.values():
        assert len(row) == len(SUBJECTS_DALIA) == 15
    assert f"{np.mean(PUBLISHED_MAE['PULSE']):.2f}" == "4.03"


def test_render_and_write(tmp_path):
    r = aggregate_report({s: 3.0 for s in SUBJECTS_DALIA}, published_baselines(["PULSE"]), "mine")
    table = render_table(r)
    lines = table.splitlines()
    assert lines[0].split("\t")[0] == "Model" and lines[0].split("\t")[-1] == "Mean"
    assert lines[1].startswith("PULSE") and lines[1].endswith("4.03")
    assert lines[2] == "\t".join(["mine"] + ["3.00"] * 15 + ["3.00"])
    paths = write_report(r, tmp_path)
    assert json.loads(paths["json"].read_text())["mean_mae"] == 3.0
    assert paths["plot"].stat().st_size > 0
