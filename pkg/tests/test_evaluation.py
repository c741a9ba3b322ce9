import csv
import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_network, unit
from qcnet.evaluation import (accuracy, balance_csv, balance_points, balances, classify,
                              classify_many, confusion, confusion_from_labels, metrics_report,
                              model_currents, precision_recall)
from qcnet.exceptions import ValidationError
from qcnet.network import build_topology
from qcnet.tasks import LabeledStates, random_overlap_task, two_state_task
from qcnet.train import GdConfig, PsoConfig, TrainedModel, train_network
from qcnet.transport import Rates


@pytest.fixture(scope="module")
def two_state_model():
    spec = build_topology(2, 4, 2)
    return train_network(spec, two_state_task(0.3).training_set(),
                         PsoConfig(swarm_size=20, iterations=40), GdConfig(iterations=30))


def random_model(seed, L=2, M=3, Nc=2, dephasing=0.0):
    spec, p = random_network(np.random.default_rng(seed), L=L, M=M, Nc=Nc)
    return TrainedModel(spec, p, Rates(dephasing=dephasing))


@given(st.integers(0, 10**6), st.booleans())
def test_transport_and_liouvillian_agree(seed, dephased):
    model = random_model(seed, dephasing=0.7 if dephased else 0.0)
    rng = np.random.default_rng(seed + 1)
    Psi = np.array([unit(rng, 2) for _ in range(3)])
    assert np.allclose(model_currents(model, Psi),
                       model_currents(model, Psi, method="liouvillian"), atol=1e-10)


@given(st.integers(0, 10**6))
def test_classify_is_argmax_and_sign_invariant(seed):
    model = random_model(seed, Nc=3)
    psi = unit(np.random.default_rng(seed), 2)
    J = model_currents(model, psi)[0]
    assert classify(model, psi) == int(np.argmax(J)) + 1
    assert classify(model, psi) == classify(model, -psi)


def test_symmetric_network_ties_to_class_one():
    # one entry, one hidden site, two exits with equal couplings: equal currents
    spec = build_topology(1, 1, 2)
    model = TrainedModel(spec, np.array([0.5, 0.5, 0.5]))
    J = model_currents(model, [1.0])[0]
    assert abs(J[0] - J[1]) < 1e-14
    assert classify(model, [1.0]) == 1


def test_input_validation():
    model = random_model(0)
    with pytest.raises(ValidationError):
        model_currents(model, [1.0, 0.0, 0.0])
    with pytest.raises(ValidationError):
        model_currents(model, [1.0, 1.0])
    with pytest.raises(ValidationError):
        model_currents(model, [1.0, 0.0], method="magic")


def test_trained_model_classifies_training_states(two_state_model):
    t = two_state_task(0.3)
    assert classify(two_state_model, t.groups[0, 0]) == 1
    assert classify(two_state_model, t.groups[1, 0]) == 2


def test_confusion_counts(two_state_model):
    t = two_state_task(0.3)
    pairs = [(t.groups[0, 0], 1), (t.groups[1, 0], 2), (t.groups[1, 0], 2)]
    cm = confusion(two_state_model, pairs)
    assert cm.tolist() == [[1, 0], [0, 2]] and cm.sum() == 3
    assert not confusion(two_state_model, []).any()
    empty = LabeledStates(np.zeros((0, 2)), np.zeros(0, int))
    assert confusion(two_state_model, empty).shape == (2, 2)


def test_confusion_from_labels_checks():
    assert confusion_from_labels([1, 2, 2], [1, 1, 2], 2).tolist() == [[1, 0], [1, 1]]
    with pytest.raises(ValidationError):
        confusion_from_labels([1, 2], [1], 2)
    with pytest.raises(ValidationError):
        confusion_from_labels([1, 3], [1, 1], 2)


def test_precision_recall_values():
    pr = precision_recall([[50, 0], [0, 50]])
    assert pr["macro_P"] == pr["macro_R"] == 1.0
    pr = precision_recall([[45, 5], [10, 40]])
    assert pr["per_class"][0]["P"] == pytest.approx(45 / 55, abs=1e-12)
    assert pr["per_class"][0]["R"] == pytest.approx(0.9, abs=1e-12)
    pr = precision_recall([[5, 0], [5, 0]])
    assert pr["per_class"][1]["P"] is None
    assert pr["macro_P"] == pytest.approx(0.5)
    assert pr["macro_R"] == pytest.approx(0.5)


@given(st.lists(st.integers(0, 30), min_size=9, max_size=9))
def test_macro_scores_in_unit_interval(counts):
    cm = np.array(counts).reshape(3, 3)
    pr = precision_recall(cm)
    for key in ("macro_P", "macro_R"):
        assert pr[key] is None or 0 <= pr[key] <= 1
    perfect = all(d["P"] in (None, 1.0) and d["R"] in (None, 1.0) for d in pr["per_class"])
    assert perfect == (cm.sum() == np.trace(cm))


def test_accuracy_values():
    assert accuracy(np.diag([3, 4])) == 1
    assert accuracy([[5, 5], [5, 5]]) == 0.5
    assert accuracy([[8, 2], [1, 9]]) == pytest.approx(0.85, abs=1e-15)
    with pytest.raises(ValidationError):
        accuracy(np.zeros((2, 2)))


def test_metrics_report_layout():
    rep = metrics_report(np.array([[8, 2], [1, 9]]), excluded_count=3)
    assert set(rep) == {"confusion", "per_class", "macro_P", "macro_R", "accuracy",
                        "excluded_count"}
    assert rep["excluded_count"] == 3 and rep["confusion"] == [[8, 2], [1, 9]]
    assert metrics_report(np.zeros((2, 2), int))["accuracy"] is None


def test_balances(two_state_model):
    t = two_state_task(0.3)
    b = balances(two_state_model, t, [1.0, 0.0])
    eta1, eta2 = np.cos(0.3) ** 2, np.sin(0.3) ** 2
    assert b.eta_tilde == pytest.approx((eta1 - eta2) / (eta1 + eta2), abs=1e-12)
    J = model_currents(two_state_model, [1.0, 0.0])[0]
    assert b.j_tilde == pytest.approx((J[0] - J[1]) / J.sum(), abs=1e-12)
    assert np.sign(b.j_tilde) == (1 if classify(two_state_model, [1.0, 0.0]) == 1 else -1)
    # orthogonal to the second group's only vector: eta2 = 0
    psi = np.array([np.cos(0.3), -np.sin(0.3)])
    assert balances(two_state_model, t, psi).eta_tilde == pytest.approx(1.0)
    psi = np.array([1.0, 1.0]) / np.sqrt(2)
    assert balances(two_state_model, t, psi).eta_tilde == pytest.approx(0.0, abs=1e-12)


def test_balance_validation(two_state_model):
    with pytest.raises(ValidationError):
        balance_points(two_state_model, random_overlap_task(2, 3, 2, 0), [[1.0, 0.0]])


def test_balance_correct_iff_same_quadrant(two_state_model):
    t = two_state_task(0.3)
    Psi = np.array([unit(np.random.default_rng(k), 2) for k in range(200)])
    pts = balance_points(two_state_model, t, Psi)
    truth = np.where(pts[:, 0] >= 0, 1, 2)
    correct = classify_many(two_state_model, Psi) == truth
    nonzero = (pts[:, 0] != 0) & (pts[:, 1] != 0)
    assert np.array_equal(correct[nonzero], (np.sign(pts[:, 0]) * np.sign(pts[:, 1]) > 0)[nonzero])


def test_balance_csv():
    text = balance_csv([[0.5, -0.25]], "config_hash=abc, seed=1")
    lines = text.splitlines()
    assert lines[0] == "# config_hash=abc, seed=1"
    rows = list(csv.reader(io.StringIO("\n".join(lines[1:]))))
    assert rows == [["eta_tilde", "j_tilde"], ["0.5", "-0.25"]]
