import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import reference as ref
from helpers import all_losses, make_batch, random_case, reference_losses
from mlcl.autodiff import Tape, Tensor, backward
from mlcl.errors import BatchTooSmallError, ConfigError, LabelSpaceTooSmallError, MLCLError
from mlcl.losses import (
    JaccardMode,
    LabelSet,
    LossConfig,
    LossKind,
    bce_loss,
    combined_objective,
    icl_loss,
    jaccard_coefficient,
    jscl_loss,
    jspcl_loss,
    scl_loss,
    slcl_loss,
)

CFG = LossConfig(tau=1.0)
INSIDE = LossConfig(tau=1.0, jaccard_weight_mode="inside")


def ls(*idx, width=3):
    return LabelSet.from_indices(idx, width)


# -- Jaccard -------------------------------------------------------------------


def test_jaccard_examples():
    joy, anger, surprise = 0, 1, 2
    assert jaccard_coefficient(ls(joy), ls(joy)) == 1.0
    assert jaccard_coefficient(ls(joy), ls(anger)) == 0.0
    assert jaccard_coefficient(ls(joy), ls(joy, surprise)) == 0.5


def test_jaccard_both_empty():
    with pytest.raises(MLCLError):
        jaccard_coefficient(ls(), ls())


label_masks = st.integers(0, 2**6 - 1)


@settings(max_examples=300)
@given(label_masks, label_masks)
def test_jaccard_symmetric_and_bounded(a, b):
    if a == 0 and b == 0:
        return
    x, y = LabelSet(a, 6), LabelSet(b, 6)
    j = jaccard_coefficient(x, y)
    assert j == jaccard_coefficient(y, x)
    assert 0.0 <= j <= 1.0
    assert (j == 1.0) == (a == b)


def test_labelset_roundtrip():
    s = LabelSet.from_indices([0, 3], 5)
    assert s.indices() == [0, 3]
    assert len(s) == 2 and 3 in s and 1 not in s
    assert LabelSet.from_array(s.to_array()) == s


# -- SCL -----------------------------------------------------------------------


def test_scl_lone_positive_is_zero():
    b = make_batch(np.array([[1.0, 0.0], [1.0, 0.0]]), [{0}, {0}], 2)
    assert scl_loss(b, CFG).item() == 0.0


def test_scl_three_sample_example():
    emb = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    b = make_batch(emb, [{0}, {0}, {1}], 2)
    anchor_term = -math.log(math.e / (math.e + 1))
    assert anchor_term == pytest.approx(0.31326, abs=1e-5)
    # anchors 1 and 2 both see the same term; anchor 3 has no positive
    assert scl_loss(b, CFG).item() == pytest.approx(anchor_term, abs=1e-14)
    assert scl_loss(b, CFG).item() == pytest.approx(ref.scl(emb.tolist(), [{0}, {0}, {1}], 1.0), abs=1e-14)


def test_scl_no_matches_is_zero():
    rng = np.random.default_rng(0)
    b = make_batch(rng.normal(size=(4, 3)), [{0}, {1}, {2}, {0, 1}], 3)
    assert scl_loss(b, CFG).item() == 0.0


def test_batch_too_small():
    b = make_batch(np.ones((1, 2)), [{0}], 2, probs=np.full((1, 2), 0.5))
    for fn in (scl_loss, jscl_loss, jspcl_loss, slcl_loss):
        with pytest.raises(BatchTooSmallError):
            fn(b, CFG)


# -- JSCL / JSPCL ----------------------------------------------------------------


def test_jscl_all_disjoint_is_zero():
    rng = np.random.default_rng(1)
    b = make_batch(rng.normal(size=(3, 4)), [{0}, {1}, {2}], 3)
    assert jscl_loss(b, CFG).item() == 0.0


def test_jscl_equals_scl_on_identical_labels():
    rng = np.random.default_rng(2)
    b = make_batch(rng.normal(size=(5, 4)), [{0, 2}] * 5, 3)
    assert abs(jscl_loss(b, CFG).item() - scl_loss(b, CFG).item()) <= 1e-12


def test_jscl_three_sample_reference():
    rng = np.random.default_rng(3)
    emb = rng.normal(size=(3, 4))
    sets = [{0}, {0, 1}, {1}]
    b = make_batch(emb, sets, 2)
    for cfg, inside in ((CFG, False), (INSIDE, True)):
        expected = ref.jscl(emb.tolist(), sets, 1.0, inside=inside)
        assert jscl_loss(b, cfg).item() == pytest.approx(expected, abs=1e-12)


def test_jscl_inside_log_weight_has_no_gradient():
    # as typeset, the Jaccard factor inside the log only shifts the value
    rng = np.random.default_rng(4)
    emb = rng.normal(size=(4, 3))
    grads, values = [], []
    for sets in ([{0}, {0, 1}, {0, 1}, {1}], [{0}, {0, 1, 2}, {0, 1, 2}, {1, 2}]):
        x = Tensor(emb, requires_grad=True)
        b = make_batch(emb, sets, 3)
        b.sentence_embeddings = x
        with Tape():
            loss = jscl_loss(b, INSIDE)
        grads.append(backward(loss, [x])[0])
        values.append(loss.item())
    np.testing.assert_allclose(grads[0], grads[1], rtol=0, atol=1e-15)
    assert values[0] != values[1]


def test_jspcl_identical_rows_two_samples():
    p = np.array([[0.3, 0.7], [0.3, 0.7]])
    b = make_batch(np.ones((2, 2)), [{1}, {1}], 2, probs=p)
    assert jspcl_loss(b, CFG).item() == 0.0


def test_jspcl_is_jscl_on_probability_rows():
    rng = np.random.default_rng(5)
    emb, _, probs, sets = random_case(rng, 6, 4, 5)
    with_probs = make_batch(emb, sets, 4, probs=probs)
    swapped = make_batch(probs, sets, 4)
    for cfg in (CFG, INSIDE):
        assert abs(jspcl_loss(with_probs, cfg).item() - jscl_loss(swapped, cfg).item()) <= 1e-12


def test_jspcl_three_sample_reference():
    rng = np.random.default_rng(6)
    probs = rng.uniform(0.05, 0.95, size=(3, 2))
    sets = [{0}, {0, 1}, {1}]
    b = make_batch(rng.normal(size=(3, 2)), sets, 2, probs=probs)
    assert jspcl_loss(b, CFG).item() == pytest.approx(ref.jscl(probs.tolist(), sets, 1.0), abs=1e-12)


# -- SLCL ------------------------------------------------------------------------


def test_slcl_equals_scl_on_single_label_batch():
    rng = np.random.default_rng(7)
    b = make_batch(rng.normal(size=(8, 4)), [{int(x)} for x in rng.integers(0, 3, size=8)], 3)
    assert abs(slcl_loss(b, CFG).item() - scl_loss(b, CFG).item()) <= 1e-12


def test_slcl_no_shared_labels_is_zero():
    rng = np.random.default_rng(8)
    b = make_batch(rng.normal(size=(3, 4)), [{0}, {1, 2}, {3}], 4)
    assert slcl_loss(b, CFG).item() == 0.0


def test_slcl_four_sample_reference():
    rng = np.random.default_rng(9)
    emb = rng.normal(size=(4, 5))
    sets = [{0, 1}, {1}, {0, 2}, {1, 2}]
    b = make_batch(emb, sets, 3)
    assert slcl_loss(b, CFG).item() == pytest.approx(ref.slcl(emb.tolist(), sets, 1.0), abs=1e-12)


# -- ICL ---------------------------------------------------------------------------


def test_icl_single_label_sample_contributes_nothing():
    rng = np.random.default_rng(10)
    b = make_batch(rng.normal(size=(2, 3)), [{0}, {2}], 3, label_emb=rng.normal(size=(2, 3, 3)))
    assert icl_loss(b, CFG).item() == 0.0


def test_icl_two_identical_label_rows():
    le = np.array([[[1.0, 2.0], [1.0, 2.0]]])
    b = make_batch(np.ones((1, 2)), [{0, 1}], 2, label_emb=le)
    assert icl_loss(b, CFG).item() == 0.0


def test_icl_reference_l4():
    rng = np.random.default_rng(11)
    le = rng.normal(size=(1, 4, 3))
    b = make_batch(np.ones((1, 3)), [{0, 1}], 4, label_emb=le)
    assert icl_loss(b, CFG).item() == pytest.approx(ref.icl(le.tolist(), [{0, 1}], 1.0), abs=1e-12)


def test_icl_label_space_too_small():
    b = make_batch(np.ones((2, 2)), [{0}, {0}], 1, label_emb=np.ones((2, 1, 2)))
    with pytest.raises(LabelSpaceTooSmallError):
        icl_loss(b, CFG)


# -- BCE and the joint objective --------------------------------------------------


def test_bce_near_perfect():
    eps = 1e-12
    p = np.array([[1 - eps, eps], [eps, 1 - eps]])
    assert bce_loss(Tensor(p), [ls(0, width=2), ls(1, width=2)]).item() == pytest.approx(0.0, abs=1e-10)


def test_bce_half():
    p = np.full((3, 4), 0.5)
    targets = [LabelSet.from_indices(s, 4) for s in ([0], [1, 2], [3])]
    assert bce_loss(Tensor(p), targets).item() == pytest.approx(math.log(2), abs=1e-15)


def test_bce_hand_fixture():
    p = [[0.9, 0.2, 0.4], [0.1, 0.6, 0.7]]
    golds = [{0}, {1, 2}]
    hand = -(
        math.log(0.9) + math.log(0.8) + math.log(0.6) + math.log(0.9) + math.log(0.6) + math.log(0.7)
    ) / 6
    got = bce_loss(Tensor(p), [LabelSet.from_indices(sorted(g), 3) for g in golds]).item()
    assert got == pytest.approx(hand, abs=1e-15)
    assert got == pytest.approx(ref.bce(p, golds), abs=1e-15)


@pytest.mark.parametrize("bad", [0.0, 1.0, -0.1, float("nan")])
def test_bce_out_of_range(bad):
    with pytest.raises(MLCLError):
        bce_loss(Tensor([[bad, 0.5]]), [ls(0, width=2)])


def test_combined_objective():
    cl, bce = Tensor(0.4), Tensor(0.6)
    assert combined_objective(cl, bce, 0.0).item() == 0.6
    assert combined_objective(cl, bce, 1.0).item() == 0.4
    assert combined_objective(cl, bce, 0.5).item() == pytest.approx(0.5, abs=1e-16)
    with pytest.raises(ConfigError):
        combined_objective(cl, bce, 1.5)


def test_loss_config_validation():
    with pytest.raises(ConfigError):
        LossConfig(tau=0.0)
    with pytest.raises(ConfigError):
        LossConfig(alpha=-0.1)
    cfg = LossConfig(loss_kind="jscl", jaccard_weight_mode="inside")
    assert cfg.loss_kind is LossKind.JSCL and cfg.jaccard_weight_mode is JaccardMode.INSIDE_LOG


# -- properties ---------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(20))
def test_losses_match_scalar_reference(seed):
    rng = np.random.default_rng(seed)
    k, l, d = int(rng.integers(2, 17)), int(rng.integers(2, 9)), int(rng.integers(1, 17))
    tau = float(rng.uniform(0.2, 2.0))
    emb, le, probs, sets = random_case(rng, k, l, d)
    got = all_losses(emb, le, probs, sets, l, tau)
    want = reference_losses(emb, le, probs, sets, tau)
    for name in want:
        assert abs(got[name] - want[name]) <= 1e-10, name


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_losses_permutation_invariant_and_non_negative(seed):
    rng = np.random.default_rng(seed)
    k, l, d = int(rng.integers(2, 10)), int(rng.integers(2, 6)), int(rng.integers(2, 8))
    emb, le, probs, sets = random_case(rng, k, l, d)
    perm = rng.permutation(k)
    a = all_losses(emb, le, probs, sets, l, 0.7)
    b = all_losses(emb[perm], le[perm], probs[perm], [sets[i] for i in perm], l, 0.7)
    for name in a:
        assert math.isfinite(a[name]) and a[name] >= 0.0, name
        assert abs(a[name] - b[name]) <= 1e-9, name


@pytest.mark.parametrize("tau", [0.1, 0.5, 3.0])
def test_equal_similarities_make_losses_tau_independent(tau):
    # every embedding identical -> all pairwise similarities equal
    k, l = 5, 3
    emb = np.tile([0.3, -0.2, 0.9], (k, 1))
    le = np.tile([1.0, 2.0], (k, l, 1))
    probs = np.full((k, l), 0.4)
    sets = [{0}, {0}, {0, 1}, {1, 2}, {0, 1}]
    base = all_losses(emb, le, probs, sets, l, 1.0)
    other = all_losses(emb, le, probs, sets, l, tau)
    for name in base:
        assert other[name] == pytest.approx(base[name], abs=1e-12), name


def test_no_positive_pairs_zero_convention():
    rng = np.random.default_rng(12)
    emb = rng.normal(size=(4, 3))
    b = make_batch(emb, [{0}, {1}, {2}, {3}], 4)
    assert scl_loss(b, CFG).item() == 0.0
    assert jscl_loss(b, CFG).item() == 0.0
    assert slcl_loss(b, CFG).item() == 0.0
