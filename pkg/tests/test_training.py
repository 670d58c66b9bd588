import math

import numpy as np
import pytest

from ecgsal.models import CamNetConfig, CamNetModel, LstmNetConfig, LstmNetModel
from ecgsal.signal_io import stack_windows
from ecgsal.synth import synth_dataset
from ecgsal.training import (
    TrainConfig,
    TrainingDiverged,
    confusion_matrix,
    evaluate,
    metrics_from_confusion,
    predict,
    predict_proba,
    train,
)


def brute_force_metrics(y_true, y_pred, n):
    out = []
    for c in range(n):
        tp = sum(t == c and p == c for t, p in zip(y_true, y_pred))
        fp = sum(t != c and p == c for t, p in zip(y_true, y_pred))
        fn = sum(t == c and p != c for t, p in zip(y_true, y_pred))
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else float("nan")
        f1 = float("nan") if math.isnan(rec) else (2 * prec * rec / (prec + rec) if prec + rec else 0.0)
        out.append((prec, rec, f1))
    return out


def test_metrics_match_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(20):
        y = rng.integers(0, 8, size=60)
        p = np.where(rng.random(60) < 0.6, y, rng.integers(0, 8, size=60))
        m = metrics_from_confusion(confusion_matrix(y, p))
        want = brute_force_metrics(y.tolist(), p.tolist(), 8)
        for c in range(8):
            np.testing.assert_allclose([m.precision[c], m.recall[c], m.f1[c]], want[c], rtol=1e-12)
        assert m.accuracy == pytest.approx(np.mean(y == p))
        present = [c for c in range(8) if (y == c).any()]
        assert m.macro_f1 == pytest.approx(np.mean([want[c][2] for c in present]))


def test_confusion_layout():
    cm = confusion_matrix([0, 0, 1, 2], [0, 1, 1, 0], n_classes=3)
    assert cm.tolist() == [[1, 1, 0], [0, 1, 0], [1, 0, 0]]


def test_absent_class_is_undefined():
    m = metrics_from_confusion(confusion_matrix([0, 0, 1], [0, 1, 1], n_classes=3))
    assert math.isnan(m.recall[2]) and math.isnan(m.f1[2])
    assert [c.name for c in m.undefined_classes] == ["PAC"]
    assert not math.isnan(m.macro_f1)
    assert m.rows()[-1][0] == "macro"


@pytest.fixture(scope="module")
def toy():
    items = synth_dataset(12, seed=5)
    return stack_windows([s.window for s in items])


def test_training_fits_toy_set_and_is_reproducible(toy):
    X, y = toy
    cfg = TrainConfig(epochs=150, seed=3)
    a, b = LstmNetModel(seed=1), LstmNetModel(seed=1)
    ra, rb = train(a, X, y, cfg), train(b, X, y, cfg)
    assert ra.loss_curve == rb.loss_curve
    assert ra.loss_curve[-1] < ra.loss_curve[0]
    assert evaluate(a, X, y).accuracy >= 0.99
    np.testing.assert_array_equal(predict_proba(a, X), predict_proba(b, X))


def test_untrained_accuracy_is_near_chance(toy):
    X, y = toy
    acc = [np.mean(predict(LstmNetModel(seed=s), X) == y) for s in range(5)]
    assert abs(np.mean(acc) - 0.125) <= 0.05


def test_checkpoints_per_epoch(toy, tmp_path):
    X, y = toy
    res = train(LstmNetModel(LstmNetConfig(lstm_hidden=8), seed=0), X[:16], y[:16], TrainConfig(epochs=2),
                checkpoint_dir=tmp_path)
    assert [p.name for p in res.checkpoints] == ["epoch_001.npz", "epoch_002.npz"]
    assert all(p.exists() for p in res.checkpoints)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported(toy):
    X, y = toy
    with pytest.raises(TrainingDiverged):
        train(LstmNetModel(seed=0), X, y, TrainConfig(lr=1e300, epochs=3))


def test_input_validation(toy):
    X, y = toy
    with pytest.raises(ValueError):
        train(LstmNetModel(seed=0), X[:0], y[:0])
    with pytest.raises(ValueError):
        train(LstmNetModel(seed=0), X, y[:-1])


def test_on_epoch_can_stop_early(toy):
    X, y = toy
    seen = []
    result = train(LstmNetModel(seed=0), X, y, TrainConfig(epochs=10), on_epoch=lambda e, loss: seen.append(e) or e == 2)
    assert seen == [0, 1, 2] and len(result.loss_curve) == 3


@pytest.fixture(scope="module")
def two_class():
    # N versus AFIB: regular versus irregular rhythm, separable by construction
    from ecgsal.signal_io import RhythmClass

    items = synth_dataset(24, seed=8, classes=[RhythmClass.N, RhythmClass.AFIB])
    X, y = stack_windows([s.window for s in items])
    return X, (y == RhythmClass.AFIB).astype(np.int64)


def test_separable_toy_reaches_full_training_accuracy(two_class):
    X, y = two_class
    model = CamNetModel(CamNetConfig(n_classes=2), seed=0)
    train(model, X, y, TrainConfig(epochs=30, seed=0))
    assert evaluate(model, X, y).confusion.trace() == len(y)


def test_loss_halves_within_five_epochs(two_class):
    X, y = two_class
    result = train(CamNetModel(CamNetConfig(n_classes=2), seed=0), X, y, TrainConfig(epochs=5, seed=0))
    assert result.loss_curve[-1] <= 0.5 * result.loss_curve[0]


def test_zero_epochs_leaves_model_unchanged(toy):
    X, y = toy
    model = LstmNetModel(seed=2)
    before = {k: v.copy() for k, v in model.state_dict().items()}
    assert train(model, X, y, TrainConfig(epochs=0)).loss_curve == []
    assert all(np.array_equal(before[k], v) for k, v in model.state_dict().items())
