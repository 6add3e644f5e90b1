import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from urbanmask.evalmetrics import CSV_HEADER, ConfusionCounts, confuse, evaluate_scenes, metrics
from urbanmask.raster import BinaryMask


@settings(max_examples=300, deadline=None)
@given(arrays(np.uint8, (9, 7), elements=st.integers(0, 1)),
       arrays(np.uint8, (9, 7), elements=st.integers(0, 1)))
def test_counts_match_brute_force(pred, truth):
    c = confuse(pred, truth)
    assert (c.tp, c.fp, c.fn, c.tn) == oracles.brute_counts(pred, truth)
    rep = metrics(c)
    assert rep.iou <= rep.f1 + 1e-15
    if c.tp + c.fp + c.fn:
        assert abs(rep.f1 - 2 * c.tp / (2 * c.tp + c.fp + c.fn)) < 1e-12


def test_perfect_prediction():
    m = np.array([[1, 0], [0, 1]], np.uint8)
    rep = metrics(confuse(BinaryMask(m), BinaryMask(m)))
    assert (rep.precision, rep.recall, rep.f1, rep.iou, rep.overall_accuracy) == (1, 1, 1, 1, 1)


def test_all_negative_both_sides_is_perfect():
    z = np.zeros((4, 4), np.uint8)
    rep = metrics(confuse(z, z))
    assert rep.f1 == 1.0 and rep.overall_accuracy == 1.0


def test_empty_prediction_on_positive_truth():
    rep = metrics(confuse(np.zeros((2, 2), np.uint8), np.ones((2, 2), np.uint8)))
    assert rep.precision == 0.0 and rep.recall == 0.0 and rep.f1 == 0.0
    assert rep.overall_accuracy == 0.0


def test_size_mismatch():
    with pytest.raises(ValueError):
        confuse(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        metrics(ConfusionCounts(0, 0, 0, 0))


def test_pooled_versus_macro():
    # scene A: 4 pixels all right; scene B: 100 pixels half wrong
    a = (np.ones((2, 2), np.uint8), np.ones((2, 2), np.uint8))
    pb = np.zeros((10, 10), np.uint8)
    tb = np.zeros((10, 10), np.uint8)
    tb[:5] = 1
    reports, pooled, macro = evaluate_scenes([a, (pb, tb)])
    assert macro == pytest.approx(0.75)
    assert pooled.overall_accuracy == pytest.approx(54 / 104)
    assert pooled.counts == reports[0].counts + reports[1].counts


def test_csv_row_format():
    rep = metrics(ConfusionCounts(1, 1, 0, 2))
    row = rep.csv_row("s1").split(",")
    assert len(row) == len(CSV_HEADER.split(","))
    assert row[:5] == ["s1", "1", "1", "0", "2"]
