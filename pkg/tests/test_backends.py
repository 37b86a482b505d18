"""Cross-backend agreement: the compiled kernels and the numpy fallback must
compute the same functions (bitwise for pooling, to accumulation-order
tolerance for convolutions)."""

import numpy as np
import pytest

from ppgsleep import backend
from ppgsleep import kernels_py
from ppgsleep import model
from ppgsleep import tensorcore as tc

compiled = pytest.importorskip("ppgsleep._ckernels")


CASES = [
    # (B, L, Ci, Co, K, dilation, pad)
    (1, 16, 1, 1, 1, 1, "valid"),
    (2, 33, 3, 5, 3, 1, "same"),
    (3, 64, 4, 4, 7, 4, "same"),
    (2, 200, 2, 3, 3, 32, "same"),
    (1, 40, 5, 2, 5, 2, "valid"),
]


def pads(L, K, dilation, mode):
    span = (K - 1) * dilation
    if mode == "same":
        return span // 2, span - span // 2
    return 0, 0


@pytest.mark.parametrize("dtype,tol", [(np.float64, 1e-12), (np.float32, 1e-4)])
@pytest.mark.parametrize("case", CASES)
def test_conv_agreement(case, dtype, tol):
    b, length, ci, co, k, dil, mode = case
    rng = np.random.default_rng(abs(hash(case)) % 2**32)
    x = rng.standard_normal((b, length, ci)).astype(dtype)
    w = rng.standard_normal((k, ci, co)).astype(dtype)
    pl, pr = pads(length, k, dil, mode)
    y_py = kernels_py.conv1d_fwd(x, w, dil, pl, pr)
    y_c = compiled.conv1d_fwd(x, w, dil, pl, pr)
    assert y_py.shape == y_c.shape
    scale = max(np.abs(y_py).max(), 1.0)
    assert np.abs(y_py - y_c).max() / scale < tol

    gy = rng.standard_normal(y_py.shape).astype(dtype)
    gx_py, gw_py = kernels_py.conv1d_bwd(x, w, gy, dil, pl, pr)
    gx_c, gw_c = compiled.conv1d_bwd(x, w, gy, dil, pl, pr)
    assert np.abs(gx_py - gx_c).max() / max(np.abs(gx_py).max(), 1.0) < tol
    assert np.abs(gw_py - gw_c).max() / max(np.abs(gw_py).max(), 1.0) < tol


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_pool_agreement_bitwise(dtype):
    rng = np.random.default_rng(1)
    x = rng.standard_normal((3, 20, 4)).astype(dtype)
    x[0, 2] = x[0, 3]  # force ties
    y_py, a_py = kernels_py.maxpool2_fwd(x)
    y_c, a_c = compiled.maxpool2_fwd(x)
    assert y_py.tobytes() == y_c.tobytes()
    assert a_py.tobytes() == a_c.tobytes()
    gy = rng.standard_normal(y_py.shape).astype(dtype)
    assert kernels_py.maxpool2_bwd(gy, a_py).tobytes() == \
        compiled.maxpool2_bwd(gy, a_c).tobytes()


def test_full_model_forward_agreement():
    spec = model.ModelSpec(feature_filters=(2, 3), window_len=16, feature_dim=4,
                           tcn_kernel=3, tcn_filters=4, tcn_dilations=(1, 2),
                           tcn_stacks=1)
    params = model.init_params(spec, 0, dtype=np.float64)
    params["classifier.w"].data[:] = np.random.default_rng(1).standard_normal(
        params["classifier.w"].data.shape)
    x = np.random.default_rng(2).standard_normal((2, 3 * spec.window_len))
    with backend.use_backend("python"), tc.no_grad():
        y_py = model.forward_logits(params, spec, x).data
    with backend.use_backend("compiled"), tc.no_grad():
        y_c = model.forward_logits(params, spec, x).data
    assert np.abs(y_py - y_c).max() < 1e-11


def test_backend_selection():
    assert set(backend.available()) >= {"python"}
    with backend.use_backend("python"):
        assert backend.active().NAME == "python"
    with pytest.raises(Exception):
        backend.set_backend("turbo")
