import numpy as np
import pytest

from hazardcast import autodiff as ad


def central_difference(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Independent gradient oracle: central finite differences of f at x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def gradcheck(analytic: np.ndarray, numeric: np.ndarray, tol: float = 1e-5) -> None:
    """Assert |analytic - numeric| <= tol * max(1, |analytic|, |numeric|) elementwise."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    err = np.abs(analytic - numeric) / scale
    assert err.max() <= tol, f"gradient mismatch: max rel err {err.max():.3g}"


def model_gradcheck(model, window, loss_of_eta, tol: float = 1e-5, h: float = 1e-6):
    """Check d(loss)/d(param) against central differences for every parameter."""
    out = model.forward(window)
    loss = loss_of_eta(out.log_rates)
    model.zero_grad()
    ad.backward(loss)
    analytic = {name: p.grad.copy() for name, p in model.parameters().items()}

    for name, param in model.parameters().items():
        def f(values, _param=param):
            old = _param.value.copy()
            _param.value[...] = values
            with ad.no_grad():
                eta = model.forward(window).log_rates
            _param.value[...] = old
            return float(loss_of_eta(eta).value)

        numeric = central_difference(f, param.value.copy(), h=h)
        try:
            gradcheck(analytic[name], numeric, tol=tol)
        except AssertionError as e:
            raise AssertionError(f"parameter {name}: {e}") from None


@pytest.fixture(autouse=True)
def _reset_clamp_counter():
    ad.reset_exp_clamp_events()
    yield
