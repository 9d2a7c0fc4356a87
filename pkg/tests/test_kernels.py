import numpy as np
import pytest

from mlcl import kernels

needs_numba = pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba not installed")


@pytest.fixture
def restore_backend():
    saved = kernels.get_backend()
    yield
    kernels.set_backend(saved)


def _both(fn, *args):
    kernels.set_backend("numba")
    a = fn(*args)
    kernels.set_backend("numpy")
    b = fn(*args)
    return a, b


@needs_numba
def test_bag_mean_backends_agree(restore_backend):
    rng = np.random.default_rng(0)
    table = rng.normal(size=(30, 5))
    lengths = rng.integers(1, 7, size=9)
    ids = rng.integers(0, 30, size=lengths.sum())
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    a, b = _both(kernels.bag_mean, table, ids, offsets)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-14)
    g = rng.normal(size=(9, 5))
    a, b = _both(kernels.bag_mean_backward, g, ids, offsets, 30)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-14)


@needs_numba
def test_offdiag_log_softmax_backends_agree(restore_backend):
    rng = np.random.default_rng(1)
    z = rng.normal(size=(4, 6, 6)) * 5
    a, b = _both(kernels.offdiag_log_softmax, z)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-13)
    g = rng.normal(size=z.shape)
    a2, b2 = _both(kernels.offdiag_log_softmax_backward, g, a)
    np.testing.assert_allclose(a2, b2, rtol=0, atol=1e-13)


@pytest.mark.parametrize("backend", ["numpy", pytest.param("numba", marks=needs_numba)])
def test_offdiag_log_softmax_rows_normalise(restore_backend, backend):
    kernels.set_backend(backend)
    z = np.random.default_rng(2).normal(size=(2, 5, 5))
    z[0, 1, 1] = 1e6  # diagonal must be ignored
    logp = kernels.offdiag_log_softmax(z)
    mask = ~np.eye(5, dtype=bool)
    sums = np.where(mask, np.exp(logp), 0.0).sum(axis=-1)
    np.testing.assert_allclose(sums, 1.0, atol=1e-14)
    assert np.all(np.diagonal(logp, axis1=1, axis2=2) == 0.0)


@needs_numba
def test_cluster_scatter_backends_agree(restore_backend):
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(50, 4))
    ids = rng.integers(0, 5, size=50)
    ids[:5] = np.arange(5)
    a, b = _both(kernels.cluster_scatter, pts, ids, 5)
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        kernels.set_backend("cuda")


def test_benchmark_script_runs(capsys):
    import runpy
    from pathlib import Path

    script = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"
    bench = runpy.run_path(str(script))
    bench["main"](["--repeat", "1", "--skip-epoch"])
    assert "cluster_scatter" in capsys.readouterr().out
    assert kernels.get_backend() == "numba"
