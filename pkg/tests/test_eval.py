import numpy as np
import pytest

from flowcast.dataset import Dataset, NormStats
from flowcast.errors import EmptyInput, NonPositiveTruth, SpecMismatch
from flowcast.evaluation import accuracy, evaluate, predict_labels, relative_errors
from flowcast.flowspace import FlowSpec
from flowcast.nn import ModelConfig, build_model
from flowcast.oracle import generate_dataset, make_technology


def test_accuracy_examples():
    mre, acc = accuracy([110.0, 90.0], [100.0, 100.0])
    assert mre == pytest.approx(10.0) and acc == pytest.approx(90.0)
    assert accuracy([5.0], [5.0]) == (0.0, 100.0)
    np.testing.assert_allclose(relative_errors([1.0, 3.0], [2.0, 2.0]), [0.5, 0.5])


def test_accuracy_errors():
    with pytest.raises(EmptyInput):
        accuracy([], [])
    with pytest.raises(NonPositiveTruth):
        accuracy([1.0], [0.0])


@pytest.fixture(scope="module")
def setup():
    spec = FlowSpec(("a", "b", "c"), (2, 2, 1))
    data = generate_dataset(spec, make_technology(spec, seed=0), 30, seed=0)
    return build_model(ModelConfig(3, 5, lstm_units=4, dense_units=5), seed=0), data


def test_evaluate_report(setup):
    model, data = setup
    stats = NormStats(float(data.labels.mean()), 1.0)
    rep = evaluate(model, data, stats, seed=3)
    assert rep.n_points == 30 and sum(rep.subset_sizes) == 30 and len(rep.subset_sizes) == 4
    # the overall figure is the size-weighted mean of the subsets
    weighted = np.dot(rep.subset_sizes, rep.subset_errors) / 30
    assert rep.mean_relative_error == pytest.approx(weighted, rel=1e-12)
    assert rep.accuracy == pytest.approx(100 - rep.mean_relative_error)
    np.testing.assert_array_equal(rep.preds, predict_labels(model, data, stats))
    text = rep.summary("ps")
    assert "accuracy" in text and "subset 4" in text and "units: ps" in text


def test_evaluate_errors(setup):
    model, data = setup
    stats = NormStats(1.0, 1.0)
    with pytest.raises(EmptyInput):
        evaluate(model, data.subset(np.arange(0)), stats)
    other = FlowSpec(("x", "y"), (2, 2))
    bad = Dataset(other, np.zeros((1, 4), dtype=int), [1.0], [1.0])
    with pytest.raises(SpecMismatch):
        predict_labels(model, bad, stats)
