"""Time each hot kernel and one training epoch under the numba and numpy backends.

Usage::

    python benchmarks/bench_kernels.py [--repeat 20] [--skip-epoch]

Numba functions are compiled (and cached) before timing starts.
"""

import argparse
import time

import numpy as np

from mlcl import kernels
from mlcl.data import SyntheticConfig, generate_synthetic, split_indices
from mlcl.model import init_params
from mlcl.training import TrainConfig, train


def _best_of(fn, repeat):
    fn()
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def kernel_cases(rng):
    table = rng.normal(size=(500, 32))
    lengths = rng.integers(5, 20, size=512)
    offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    ids = rng.integers(0, 500, size=offsets[-1]).astype(np.int64)
    grad_bag = rng.normal(size=(512, 32))
    z = rng.normal(size=(32, 32, 32))
    logp = kernels.offdiag_log_softmax(z)
    grad_z = rng.normal(size=z.shape)
    points = rng.normal(size=(2000, 32))
    clusters = rng.integers(0, 20, size=2000).astype(np.int64)
    return {
        "bag_mean (512 bags, d=32)": lambda: kernels.bag_mean(table, ids, offsets),
        "bag_mean_backward": lambda: kernels.bag_mean_backward(grad_bag, ids, offsets, 500),
        "offdiag_log_softmax (32x32x32)": lambda: kernels.offdiag_log_softmax(z),
        "offdiag_log_softmax_backward": lambda: kernels.offdiag_log_softmax_backward(grad_z, logp),
        "cluster_scatter (N=2000, k=20)": lambda: kernels.cluster_scatter(points, clusters, 20),
    }


def epoch_case():
    ds = generate_synthetic(SyntheticConfig(n_labels=6, vocab_size=500, n_examples=2900, seed=0))
    tr, va, _ = split_indices(len(ds), 0, sizes=(2000, 300, 600))
    train_set, valid = ds.subset(tr), ds.subset(va)
    cfg = TrainConfig(max_epochs=1, loss_kind="scl", alpha=0.2)
    params = init_params(0, train_set.vocab_size, train_set.n_labels, cfg.dim, cfg.init_scale)
    return lambda: train(params, train_set, valid, cfg)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    parser.add_argument("--skip-epoch", action="store_true")
    args = parser.parse_args(argv)

    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    cases = kernel_cases(np.random.default_rng(0))
    if not args.skip_epoch:
        cases["training epoch (2000 ex, SCL)"] = epoch_case()

    print(f"{'case':34s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, fn in cases.items():
        times = {}
        for backend in ("numba", "numpy"):
            kernels.set_backend(backend)
            repeat = max(1, args.repeat // 10) if name.startswith("training") else args.repeat
            times[backend] = _best_of(fn, repeat)
        kernels.set_backend("numba")
        ratio = times["numpy"] / times["numba"]
        print(f"{name:34s} {times['numba'] * 1e3:10.3f} {times['numpy'] * 1e3:10.3f} {ratio:7.2f}x")


if __name__ == "__main__":
    main()
