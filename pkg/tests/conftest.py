import numpy as np
import pytest

from phycr import tensor as T


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def numeric_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``f`` at every entry of ``x``."""
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f(x)
        flat[i] = old - eps
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * eps)
    return g


def rel_err(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-30))


def check_grad(build, inputs: list, rng, eps: float = 1e-6) -> float:
    """Worst relative error between autodiff and finite differences of ``sum(build(*xs) * probe)``.

    A fixed random probe turns a tensor-valued op into a scalar loss.
    """
    xs = [T.Tensor(x.copy(), requires_grad=True) for x in inputs]
    out = build(*xs)
    probe = rng.standard_normal(out.shape)
    loss = T.tsum(out * T.Tensor(probe))
    loss.backward()
    worst = 0.0
    for k, x in enumerate(inputs):
        def f(v, k=k):
            args = [T.Tensor(a.data) for a in xs]
            args[k] = T.Tensor(v)
            return float((build(*args).data * probe).sum())
        num = numeric_grad(f, x.copy(), eps)
        worst = max(worst, rel_err(xs[k].grad, num))
    return worst


# -- acceptance report ------------------------------------------------------
ACCEPTANCE: dict = {}


def record(number: int, title: str, ok: bool, detail: str = ""):
    ACCEPTANCE[number] = (title, ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n} [{'PASS' if ok else 'FAIL'}] {title}: {detail}")


@pytest.fixture(scope="session", autouse=True)
def single_thread_blas():
    """Deterministic mode: one BLAS thread, as with PHYCR_THREADS=1."""
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield
