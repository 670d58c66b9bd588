"""Session fixtures shared by the saliency and acceptance suites.

Desk-scale data and trained models are expensive, so they are built once.
"""

import time
from dataclasses import dataclass

import numpy as np
import pytest

from ecgsal.models import CamNetModel, ClassifierModel
from ecgsal.signal_io import stack_windows
from ecgsal.synth import synth_dataset
from ecgsal.training import TrainConfig, evaluate, train

TRAIN_SEED, TEST_SEED, MODEL_SEED = 1, 2, 0
TARGET_F1 = 0.90


@dataclass
class DeskData:
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    truths: list  # GroundTruth per test window


@dataclass
class Trained:
    model: object
    epochs: int
    seconds: float
    macro_f1: float


@pytest.fixture(scope="session")
def desk_data() -> DeskData:
    tr = synth_dataset(400, seed=TRAIN_SEED)
    te = synth_dataset(100, seed=TEST_SEED)
    X_train, y_train = stack_windows([s.window for s in tr])
    X_test, y_test = stack_windows([s.window for s in te])
    return DeskData(X_train, y_train, X_test, y_test, [s.truth for s in te])


def _train_until(model, data: DeskData, max_epochs: int, target: float | None) -> Trained:
    scores: list[float] = []

    def on_epoch(epoch, loss):
        scores.append(evaluate(model, data.X_test, data.y_test).macro_f1)
        model.train()
        return target is not None and scores[-1] >= target

    start = time.perf_counter()
    train(model, data.X_train, data.y_train, TrainConfig(epochs=max_epochs, seed=MODEL_SEED), on_epoch=on_epoch)
    return Trained(model, len(scores), time.perf_counter() - start, scores[-1])


@pytest.fixture(scope="session")
def trained_classifier(desk_data) -> Trained:
    """Desk-scale classifier trained until macro-F1 reaches the target, at most 30 epochs."""
    return _train_until(ClassifierModel(seed=MODEL_SEED), desk_data, 30, TARGET_F1)


@pytest.fixture(scope="session")
def trained_camnet(desk_data) -> Trained:
    return _train_until(CamNetModel(seed=MODEL_SEED), desk_data, 3, None)


# ---------------------------------------------------------------------------
# acceptance report: one line per criterion, repeated in the terminal summary

_REPORT: list[str] = []


@pytest.fixture
def report():
    def record(name: str, passed: bool, detail: str) -> bool:
        line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
        print(line)
        _REPORT.append(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for line in _REPORT:
            terminalreporter.write_line(line)
