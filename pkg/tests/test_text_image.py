import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dbmf import text_image as ti
from dbmf.data import SynthConfig, generate_synthetic, split_id_8_2
from dbmf.errors import ConfigError, DimensionMismatch, InvalidK, LabelOutOfRange, ZeroVector
from dbmf.pipeline import max_prototype_similarity
from tests.oracles import (
    central_difference,
    mp_cross_entropy,
    project_oracle,
    rel_error,
    st_oracle,
)


def make_branch(weights, prototypes, tau=1.0, bias=None):
    weights = np.asarray(weights, dtype=float)
    bias = np.zeros(weights.shape[1]) if bias is None else np.asarray(bias, dtype=float)
    return ti.TextImageBranch(weights, bias, np.asarray(prototypes, dtype=float), math.log(tau))


def random_instance(seed, d_embed=5, d_proj=4, k=3, n=6):
    rng = np.random.default_rng(seed)
    protos = rng.standard_normal((k, d_proj))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    branch = ti.TextImageBranch(
        rng.standard_normal((d_embed, d_proj)), 0.3 * rng.standard_normal(d_proj), protos,
        float(rng.uniform(math.log(0.05), math.log(2.0))))
    x = rng.standard_normal((n, d_embed))
    y = rng.integers(0, k, n)
    return branch, x, y


@pytest.fixture(scope="module")
def trained():
    ds = generate_synthetic(SynthConfig())
    train, _ = split_id_8_2(ds, 0)
    b0 = ti.init_text_image_branch(ds.dim, ds.class_names, seed=0)
    branch, trace = ti.train_text_image(b0, train, ti.TrainConfig(lam=1.0))
    return branch, trace, train


def test_project_image_examples():
    b = make_branch(np.eye(2), np.eye(2))
    np.testing.assert_allclose(ti.project_image(b, [3.0, 4.0]), [0.6, 0.8], atol=1e-15)
    with pytest.raises(DimensionMismatch):
        ti.project_image(b, [1.0, 2.0, 3.0])
    with pytest.raises(ZeroVector):
        ti.project_image(b, [0.0, 0.0])


@pytest.mark.parametrize("seed", range(5))
def test_project_image_matches_loop_oracle(seed):
    branch, x, _ = random_instance(seed)
    for row in x:
        out = ti.project_image(branch, row)
        assert abs(np.linalg.norm(out) - 1.0) < 1e-12
        expected = project_oracle(branch.weights.tolist(), branch.bias.tolist(), row.tolist())
        np.testing.assert_allclose(out, expected, atol=1e-12)


def test_similarities_examples():
    b = make_branch(np.eye(3), np.eye(3)[:2] @ np.eye(3), tau=1.0)
    assert ti.similarities(b, np.array([1.0, 0.0, 0.0]))[0] == pytest.approx(1.0)
    np.testing.assert_array_equal(ti.similarities(b, np.array([0.0, 0.0, 1.0])), [0.0, 0.0])
    f = np.array([0.6, 0.8, 0.0])
    b2 = make_branch(np.eye(3), b.prototypes, tau=0.5)
    np.testing.assert_allclose(ti.similarities(b2, f), 2 * ti.similarities(b, f), rtol=1e-15)
    assert np.all(np.abs(ti.similarities(b2, f)) <= 1 / 0.5 + 1e-12)


def test_contrastive_examples():
    # feature orthogonal to both prototypes -> equal logits
    b = make_branch(np.eye(3), [[1.0, 0, 0], [0, 1.0, 0]])
    assert ti.loss_contrastive(b, [[0, 0, 1.0]], [0]) == pytest.approx(math.log(2), abs=1e-15)
    # margin 2/tau = 40 >= 30
    b = make_branch(np.eye(2), [[1.0, 0], [-1.0, 0]], tau=0.05)
    assert ti.loss_contrastive(b, [[1.0, 0.0]], [0]) < 1e-12
    with pytest.raises(LabelOutOfRange):
        ti.loss_contrastive(b, [[1.0, 0.0]], [2])


def test_contrastive_matches_extended_precision():
    branch, x, y = random_instance(42, n=4, k=3)
    rows = [ti.similarities(branch, project_oracle(branch.weights.tolist(), branch.bias.tolist(),
                                                   r.tolist())) for r in x]
    assert abs(ti.loss_contrastive(branch, x, y) - mp_cross_entropy(rows, y)) < 1e-12


def test_eta_star():
    assert ti.eta_star(2) == -1.0
    assert ti.eta_star(3) == -0.5
    assert ti.eta_star(11) == pytest.approx(-0.1, abs=1e-16)
    with pytest.raises(InvalidK):
        ti.eta_star(1)


def test_text_separation_examples():
    assert ti.loss_text_separation(np.array([[1.0, 0], [-1.0, 0]])) == 0.0
    assert ti.loss_text_separation(np.array([[1.0, 0], [1.0, 0]])) == pytest.approx(4.0)
    assert ti.loss_text_separation(np.eye(3)) == pytest.approx(0.25)


@settings(max_examples=50)
@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_text_separation_nonnegative(k, seed):
    t = np.random.default_rng(seed).standard_normal((k, k + 1))
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    assert ti.loss_text_separation(t) >= 0.0


@pytest.mark.parametrize("k", range(2, 13))
def test_simplex_frame_attains_eta(k):
    frame = ti.simplex_frame(k, k - 1)
    np.testing.assert_allclose(np.linalg.norm(frame, axis=1), 1.0, atol=1e-12)
    assert abs(max_prototype_similarity(frame) - ti.eta_star(k)) < 1e-9
    assert ti.loss_text_separation(ti.simplex_frame(k, k + 4)) < 1e-18


def test_loss_tsc_composition():
    branch, x, y = random_instance(7)
    assert ti.loss_tsc(branch, x, y, 0.0) == ti.loss_contrastive(branch, x, y)
    total = ti.loss_tsc(branch, x, y, 1.2)
    parts = ti.loss_contrastive(branch, x, y) + 1.2 * ti.loss_text_separation(branch)
    assert abs(total - parts) < 1e-14
    # confident batch at the simplex optimum
    b = make_branch(np.eye(2), [[1.0, 0], [-1.0, 0]], tau=0.01)
    assert ti.loss_tsc(b, [[1.0, 0.0], [-2.0, 0.0]], [0, 1], 1.0) < 1e-12


def test_gradients_vanish_at_simplex():
    b = make_branch(np.eye(3), ti.simplex_frame(3, 3))
    g = ti.gradients_tsc(b, np.zeros((0, 3)), [], 1.0)
    assert np.abs(g.prototypes).max() < 1e-14


@pytest.mark.parametrize("lam", [0.0, 1.3])
@pytest.mark.parametrize("seed", range(4))
def test_gradients_match_finite_differences(seed, lam):
    branch, x, y = random_instance(seed)
    g = ti.gradients_tsc(branch, x, y, lam)
    params = [branch.weights, branch.bias, branch.prototypes]
    numeric = central_difference(lambda: ti.loss_tsc(branch, x, y, lam), params)
    for analytic, num in zip([g.weights, g.bias, g.prototypes], numeric):
        assert rel_error(analytic, num) < 1e-5
    lt = branch.log_tau
    eps = 1e-5
    branch.log_tau = lt + eps
    hi = ti.loss_tsc(branch, x, y, lam)
    branch.log_tau = lt - eps
    lo = ti.loss_tsc(branch, x, y, lam)
    branch.log_tau = lt
    assert rel_error(g.log_tau, (hi - lo) / (2 * eps)) < 1e-5


def test_one_small_step_does_not_increase_loss(trained):
    _, _, train = trained
    x, y = train.embeddings(), train.labels()
    b0 = ti.init_text_image_branch(train.dim, train.class_names, seed=3)
    cfg = ti.TrainConfig(batch_size=len(y), learning_rate=1e-3, steps=1)
    b1, _ = ti.train_text_image(b0, train, cfg)
    assert ti.loss_tsc(b1, x, y, 1.0) <= ti.loss_tsc(b0, x, y, 1.0)


def test_training_classifies_and_separates(trained):
    branch, trace, train = trained
    assert len(trace) == 500
    assert ti.accuracy(branch, train.embeddings(), train.labels()) == 1.0
    assert max_prototype_similarity(branch.prototypes) < 0.2
    np.testing.assert_allclose(np.linalg.norm(branch.prototypes, axis=1), 1.0, atol=1e-12)
    assert ti.TAU_MIN <= branch.tau <= ti.TAU_MAX


def test_training_is_deterministic(trained):
    branch, trace, train = trained
    b0 = ti.init_text_image_branch(train.dim, train.class_names, seed=0)
    again, trace2 = ti.train_text_image(b0, train, ti.TrainConfig(lam=1.0))
    assert trace == trace2
    assert again.weights.tobytes() == branch.weights.tobytes()
    assert again.prototypes.tobytes() == branch.prototypes.tobytes()
    assert again.log_tau == branch.log_tau


def test_score_st_examples():
    assert ti.st_from_logits([3.0]) == -3.0
    assert ti.st_from_logits([2.0, 1.0]) == -1.0
    assert ti.st_from_logits([1.0, 1.0, 1.0]) == 1.0


@pytest.mark.parametrize("seed", range(5))
def test_score_st_matches_oracle(seed):
    branch, x, _ = random_instance(seed)
    for row in x:
        feat = project_oracle(branch.weights.tolist(), branch.bias.tolist(), row.tolist())
        logits = [math.fsum(f * t for f, t in zip(feat, proto)) / branch.tau
                  for proto in branch.prototypes.tolist()]
        assert ti.score_st(branch, row) == pytest.approx(st_oracle(logits), abs=1e-9)


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=6), st.floats(0.01, 3.0))
def test_score_st_decreases_with_top_logit(logits, bump):
    s = np.array(logits)
    top = int(np.argmax(s))
    raised = s.copy()
    raised[top] += bump
    assert ti.st_from_logits(raised) < ti.st_from_logits(s)


def test_config_and_init_validation():
    with pytest.raises(ConfigError):
        ti.TrainConfig(lam=2.0)
    assert ti.TrainConfig(lam=0.0, allow_out_of_range=True).lam == 0.0
    with pytest.raises(ConfigError):
        ti.init_text_image_branch(3, ["a", "b", "c", "d", "e"], d_proj=3)
    b = ti.init_text_image_branch(100, ["a", "b"])
    assert b.d_proj == 64 and b.tau == pytest.approx(0.07)
    assert b.prompts == ("a photo of normal a", "a photo of normal b")


def test_checkpoint_round_trip():
    branch, _, _ = random_instance(0)
    back = ti.TextImageBranch.from_dict(branch.to_dict())
    assert back.weights.tobytes() == branch.weights.tobytes()
    assert back.log_tau == branch.log_tau
