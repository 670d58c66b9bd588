import numpy as np
import pytest

from ecgsal.autodiff import ContractError, ShapeError, Tensor, ops
from ecgsal.autodiff.gradcheck import check_gradients
from ecgsal.models import (
    PAPER_CAMNET,
    PAPER_CLASSIFIER,
    CamNetConfig,
    CamNetModel,
    ClassifierConfig,
    ClassifierModel,
    ConfigurationError,
    LstmNetModel,
    build_model,
    config_dict,
    k_schedule,
)
from ecgsal.nn import InceptionBlock, ResidualUnit

TINY_CLASSIFIER = ClassifierConfig(
    inception_kernels=(3, 5), branch_channels=2, residual_units=2, residual_kernel=3, base_channels=2,
    pools=(2, 2), feature_channels=2, lstm_step=6, lstm_hidden=3, head_widths=(4,), n_classes=3, input_length=24,
)
TINY_CAMNET = CamNetConfig(residual_units=2, residual_kernel=3, base_channels=2, pools=(2, 3), n_classes=3,
                           input_length=24, cam_length=4)


def test_k_schedule():
    assert k_schedule(9) == [1, 1, 1, 1, 2, 2, 2, 2, 3]


def test_paper_scale_interface():
    assert PAPER_CLASSIFIER.cnn_features == 640
    model = ClassifierModel(PAPER_CLASSIFIER, seed=0).train()
    tr = model.forward(np.random.default_rng(0).normal(size=(1, 720)))
    assert tr.z1.shape == (1, 640)
    assert tr.z2.shape == (1, 40)
    assert tr.logits.shape == (1, 8)
    np.testing.assert_allclose(tr.probs.data.sum(), 1.0)


def test_paper_scale_camnet_interface():
    model = CamNetModel(PAPER_CAMNET, seed=0)
    model.train()
    tr = model.forward(np.random.default_rng(1).normal(size=(2, 720)))
    assert tr.features.shape == (2, 64, 48)
    assert tr.pooled.shape == (2, 64) and tr.logits.shape == (2, 8)


def test_desk_scale_shapes():
    model = ClassifierModel(seed=0).train()
    tr = model.forward(np.random.default_rng(2).normal(size=(3, 720)))
    cfg = model.config
    assert tr.z1.shape == (3, cfg.cnn_features) and tr.z2.shape == (3, 40) and tr.logits.shape == (3, 8)
    cam = CamNetModel(seed=0).train()
    assert cam.forward(np.zeros((1, 720))).features.shape[-1] == 48


def test_configuration_errors():
    with pytest.raises(ConfigurationError):
        CamNetConfig(pools=(3, 1, 2, 1))  # 720 / 6 = 120, not 48
    with pytest.raises(ConfigurationError):
        CamNetConfig(pools=(7, 1, 1, 1))
    with pytest.raises(ConfigurationError):
        ClassifierConfig(lstm_step=70)
    with pytest.raises(ConfigurationError):
        ClassifierConfig(pools=(2, 2))
    with pytest.raises(ConfigurationError):
        build_model("transformer")


def test_wrong_input_length():
    with pytest.raises(ShapeError):
        ClassifierModel(seed=0).train().forward(np.zeros((1, 700)))


def test_eval_before_training_is_an_error():
    with pytest.raises(ContractError):
        CamNetModel(seed=0).eval().forward(np.zeros((1, 720)))


def test_same_seed_same_parameters():
    a, b = ClassifierModel(seed=5), ClassifierModel(seed=5)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and pa.data.tobytes() == pb.data.tobytes()
    c = ClassifierModel(seed=6)
    assert any(pa.data.tobytes() != pc.data.tobytes() for pa, pc in zip(a.parameters(), c.parameters()))


def test_state_dict_round_trip():
    model = CamNetModel(TINY_CAMNET, seed=1).train()
    model.forward(np.random.default_rng(0).normal(size=(4, 24)))  # initializes BN stats
    state = model.state_dict()
    other = CamNetModel(TINY_CAMNET, seed=2)
    other.load_state_dict(state)
    x = np.random.default_rng(1).normal(size=(2, 24))
    np.testing.assert_array_equal(model.eval().forward(x).probs.data, other.eval().forward(x).probs.data)
    with pytest.raises(KeyError):
        other.load_state_dict({k: v for k, v in state.items() if k != "classifier.weight"})


def test_build_model_from_config_dict():
    model = build_model("classifier", 0, **config_dict(TINY_CLASSIFIER))
    assert model.config == TINY_CLASSIFIER


def test_residual_unit_and_inception_shapes():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(2, 3, 12)))
    assert ResidualUnit(3, 5, 4, 3, rng)(x).shape == (2, 5, 4)
    assert ResidualUnit(3, 3, 4, 1, rng)(x).shape == (2, 3, 12)
    assert InceptionBlock(3, 2, [3, 5, 7], 4, rng)(x).shape == (2, 4, 12)


def test_perturbation_fn_freezes_cnn_branch():
    model = ClassifierModel(TINY_CLASSIFIER, seed=3).train()
    x = np.random.default_rng(0).normal(size=(2, 24))
    model.forward(x)
    model.eval()
    fn = model.perturbation_fn(x)
    np.testing.assert_allclose(fn(Tensor(x)).data, model.forward(x).probs.data, rtol=1e-12)
    # only the LSTM input changes: a different phi gives different probabilities
    assert not np.allclose(fn(Tensor(np.zeros((2, 24)))).data, model.forward(x).probs.data)
    lstm_only = LstmNetModel(seed=0)
    assert lstm_only.perturbation_fn(None)(Tensor(np.zeros((1, 720)))).shape == (1, 8)


def _composed_check(model, x, y):
    xt = Tensor(x)
    return check_gradients(lambda: ops.softmax_cross_entropy(model.logits(xt), y), [xt, *model.parameters()])


@pytest.mark.parametrize("kind", ["classifier", "camnet"])
def test_composed_gradients(kind):
    worst = 0.0
    for i in range(10):
        rng = np.random.default_rng(100 + i)
        if kind == "classifier":
            model = ClassifierModel(TINY_CLASSIFIER, seed=i).train()
        else:
            model = CamNetModel(TINY_CAMNET, seed=i).train()
        x = rng.normal(size=(3, 24))
        y = rng.integers(0, 3, size=3)
        worst = max(worst, _composed_check(model, x, y))
    assert worst < 1e-4, f"{kind}: {worst:.2e}"


def test_k_schedule_over_fifteen_units():
    ks = k_schedule(15)
    assert ks == sorted(ks) and set(ks) == {1, 2, 3, 4}


def test_zero_final_map_gives_bias_logits():
    model = CamNetModel(TINY_CAMNET, seed=0).train()
    model.classifier.weight.data[:] = 0.0
    model.classifier.bias.data[:] = [0.5, -1.0, 2.0]
    logits = model.forward(np.random.default_rng(0).normal(size=(2, 24))).logits.data
    np.testing.assert_array_equal(logits, [[0.5, -1.0, 2.0]] * 2)
