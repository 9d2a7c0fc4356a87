import reference as ref
from mlcl.autodiff import Tensor
from mlcl.losses import (
    Batch,
    LabelSet,
    LossConfig,
    bce_loss,
    icl_loss,
    jscl_loss,
    jspcl_loss,
    scl_loss,
    slcl_loss,
)


def random_label_sets(rng, k, n_labels, pool_size=3):
    """Label sets drawn from a small pool so exact matches and overlaps occur."""
    pool = []
    for _ in range(pool_size):
        size = int(rng.integers(1, n_labels + 1))
        pool.append(frozenset(rng.choice(n_labels, size=size, replace=False).tolist()))
    return [pool[int(rng.integers(pool_size))] for _ in range(k)]


def random_case(rng, k, n_labels, dim, pool_size=3):
    emb = rng.normal(size=(k, dim))
    label_emb = rng.normal(size=(k, n_labels, dim))
    probs = rng.uniform(0.05, 0.95, size=(k, n_labels))
    sets = random_label_sets(rng, k, n_labels, pool_size)
    return emb, label_emb, probs, sets


def make_batch(emb, sets, n_labels, label_emb=None, probs=None):
    return Batch(
        Tensor(emb),
        [LabelSet.from_indices(sorted(s), n_labels) for s in sets],
        None if label_emb is None else Tensor(label_emb),
        None if probs is None else Tensor(probs),
    )


def all_losses(emb, le, probs, sets, n_labels, tau):
    b = make_batch(emb, sets, n_labels, label_emb=le, probs=probs)
    out = {}
    for name, fn, mode in (
        ("scl", scl_loss, "outside"),
        ("jscl", jscl_loss, "outside"),
        ("jscl_inside", jscl_loss, "inside"),
        ("jspcl", jspcl_loss, "outside"),
        ("jspcl_inside", jspcl_loss, "inside"),
        ("slcl", slcl_loss, "outside"),
        ("icl", icl_loss, "outside"),
    ):
        out[name] = fn(b, LossConfig(tau=tau, jaccard_weight_mode=mode)).item()
    out["bce"] = bce_loss(Tensor(probs), b.label_sets).item()
    return out


def reference_losses(emb, le, probs, sets, tau):
    return {
        "scl": ref.scl(emb.tolist(), sets, tau),
        "jscl": ref.jscl(emb.tolist(), sets, tau),
        "jscl_inside": ref.jscl(emb.tolist(), sets, tau, inside=True),
        "jspcl": ref.jscl(probs.tolist(), sets, tau),
        "jspcl_inside": ref.jscl(probs.tolist(), sets, tau, inside=True),
        "slcl": ref.slcl(emb.tolist(), sets, tau),
        "icl": ref.icl(le.tolist(), sets, tau),
        "bce": ref.bce(probs.tolist(), sets),
    }
