"""The staging network: per-window feature extraction with residual conv
blocks, a dilated temporal-context block over the window axis, and a 1x1-conv
classifier head.

The residual blocks use the corrected wiring: a kernel-1 convolution on the
skip path projects the block input to the branch width so both summands are
(N, i), and max-pooling sits after the sum. The whole network is
convolutional over the window axis, so one parameter set serves any number of
windows per input.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import tensorcore as tc
from .errors import InvalidSpecError, ModelWiringError, ShapeError
from .tensorcore import ParamStore, Tensor


@dataclass(frozen=True)
class ModelSpec:
    """Architecture hyperparameters. Defaults give the full-width network;
    ``reduced_width`` is the desk-scale variant used in tests."""

    feature_filters: tuple = (16, 16, 32, 32, 64, 64, 128, 256)
    feature_kernel: int = 3
    window_len: int = 1024
    feature_dim: int = 128
    tcn_kernel: int = 7
    tcn_filters: int = 128
    tcn_dilations: tuple = (1, 2, 4, 8, 16, 32)
    tcn_stacks: int = 2
    classes: int = 4
    adapted_skip: bool = True  # False reproduces the original, unsummable wiring

    @classmethod
    def reduced_width(cls, **overrides):
        base = dict(feature_filters=(4, 4, 8, 8, 16, 16, 32, 64),
                    feature_dim=32, tcn_filters=32)
        base.update(overrides)
        return cls(**base)

    @property
    def n_blocks(self):
        return len(self.feature_filters)

    @property
    def positions_per_window(self):
        return self.window_len >> self.n_blocks

    @property
    def flat_features(self):
        return self.positions_per_window * self.feature_filters[-1]

    def to_dict(self):
        return {
            "feature_filters": list(self.feature_filters),
            "feature_kernel": self.feature_kernel,
            "window_len": self.window_len,
            "feature_dim": self.feature_dim,
            "tcn_kernel": self.tcn_kernel,
            "tcn_filters": self.tcn_filters,
            "tcn_dilations": list(self.tcn_dilations),
            "tcn_stacks": self.tcn_stacks,
            "classes": self.classes,
            "adapted_skip": self.adapted_skip,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("feature_filters", "tcn_dilations"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def spec_with_overrides(spec, overrides):
    """Apply a plain-dict override (e.g. from a run config) to a ModelSpec."""
    fixed = {k: tuple(v) if k in ("feature_filters", "tcn_dilations") else v
             for k, v in overrides.items()}
    try:
        return replace(spec, **fixed)
    except TypeError as exc:
        raise InvalidSpecError(f"unknown model option: {exc}") from None


def validate_spec(spec):
    """Reject inconsistent specs; in particular the un-adapted residual wiring."""
    if spec.classes != 4:
        raise InvalidSpecError(f"classifier is four-class, got classes={spec.classes}")
    if spec.n_blocks < 1:
        raise InvalidSpecError("need at least one feature block")
    if spec.window_len % (1 << spec.n_blocks) != 0:
        raise InvalidSpecError(
            f"2^{spec.n_blocks} must divide window_len={spec.window_len}")
    if spec.feature_kernel < 1 or spec.feature_kernel % 2 == 0:
        raise InvalidSpecError("feature kernel must be odd and >= 1")
    if spec.tcn_kernel < 1 or spec.tcn_kernel % 2 == 0:
        raise InvalidSpecError("temporal kernel must be odd and >= 1")
    if spec.tcn_stacks < 1 or any(d < 1 for d in spec.tcn_dilations):
        raise InvalidSpecError("temporal block needs >= 1 stack and dilations >= 1")
    if spec.tcn_filters != spec.feature_dim:
        raise InvalidSpecError(
            f"temporal filters ({spec.tcn_filters}) must match the per-window "
            f"feature dimension ({spec.feature_dim}): the residual temporal "
            "layers add onto the feature sequence")
    if not spec.adapted_skip:
        in_ch = 1
        for i, f in enumerate(spec.feature_filters):
            if in_ch != f:
                raise ModelWiringError(
                    f"block {i}: cannot sum branch output (N/2, {f}) with the "
                    f"block input (N, {in_ch}); the original residual wiring "
                    "only works with the kernel-1 skip projection")
            in_ch = f
        raise ModelWiringError(
            "cannot sum branch output (N/2, i) with the block input (N, i): "
            "pooling inside the residual halves the time axis")
    return spec


def init_params(spec, seed, dtype=np.float32):
    """Deterministic fan-in-scaled uniform init from a counter-based RNG.

    The Philox stream keyed by ``seed`` makes initialization reproducible
    across platforms; biases start at zero.
    """
    validate_spec(spec)
    rng = np.random.Generator(np.random.Philox(key=seed))
    store = ParamStore()

    def he_uniform(name, shape, fan_in):
        limit = np.sqrt(6.0 / fan_in)
        store.add(name, rng.uniform(-limit, limit, size=shape).astype(dtype))

    def zeros(name, shape):
        store.add(name, np.zeros(shape, dtype=dtype))

    k = spec.feature_kernel
    in_ch = 1
    for b, f in enumerate(spec.feature_filters):
        he_uniform(f"block{b}.conv1.w", (k, in_ch, f), k * in_ch)
        zeros(f"block{b}.conv1.b", (f,))
        he_uniform(f"block{b}.conv2.w", (k, f, f), k * f)
        zeros(f"block{b}.conv2.b", (f,))
        he_uniform(f"block{b}.conv3.w", (k, f, f), k * f)
        zeros(f"block{b}.conv3.b", (f,))
        he_uniform(f"block{b}.skip_conv.w", (1, in_ch, f), in_ch)
        zeros(f"block{b}.skip_conv.b", (f,))
        in_ch = f

    he_uniform("dense.w", (spec.flat_features, spec.feature_dim), spec.flat_features)
    zeros("dense.b", (spec.feature_dim,))

    for s in range(spec.tcn_stacks):
        for li, d in enumerate(spec.tcn_dilations):
            he_uniform(f"tcn.s{s}.l{li}.w",
                       (spec.tcn_kernel, spec.tcn_filters, spec.tcn_filters),
                       spec.tcn_kernel * spec.tcn_filters)
            zeros(f"tcn.s{s}.l{li}.b", (spec.tcn_filters,))

    # zero head: logits start at 0 so the initial loss is exactly ln(classes)
    # regardless of how much variance the residual stacks accumulate
    zeros("classifier.w", (1, spec.feature_dim, spec.classes))
    zeros("classifier.b", (spec.classes,))
    return store


def res_block_forward(x, params, block_idx):
    """One adapted residual block: three same-padded convs with ReLU, plus a
    kernel-1 skip projection, summed before the pool.

    x: (N, M) or (B, N, M) with N even; returns (N/2, i) resp. (B, N/2, i).
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    n = x.shape[0] if x.data.ndim == 2 else x.shape[1]
    if n % 2 != 0:
        raise ShapeError(f"residual block needs an even time axis, got {n}")
    p = f"block{block_idx}"
    h = tc.relu(tc.conv1d(x, params[f"{p}.conv1.w"], params[f"{p}.conv1.b"], padding="same"))
    h = tc.relu(tc.conv1d(h, params[f"{p}.conv2.w"], params[f"{p}.conv2.b"], padding="same"))
    h = tc.relu(tc.conv1d(h, params[f"{p}.conv3.w"], params[f"{p}.conv3.b"], padding="same"))
    skip = tc.conv1d(x, params[f"{p}.skip_conv.w"], params[f"{p}.skip_conv.b"], padding="same")
    return tc.maxpool1d(h + skip)


def window_features(params, spec, batch):
    """Per-window feature sequence, shape (B, Q, feature_dim)."""
    validate_spec(spec)
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    if x.data.ndim != 2:
        raise ShapeError(f"batch must be (B, Q*window_len), got {x.shape}")
    b_sz, length = x.shape
    if length == 0 or length % spec.window_len != 0:
        raise ShapeError(
            f"input length {length} is not a positive multiple of window_len={spec.window_len}")
    q = length // spec.window_len

    h = tc.reshape(x, (b_sz, length, 1))
    for b in range(spec.n_blocks):
        h = res_block_forward(h, params, b)

    # (B, Q*positions, C) rows are window-major, so a plain reshape regroups
    # the per-window features
    h = tc.reshape(h, (b_sz, q, spec.flat_features))
    return tc.relu(tc.dense(h, params["dense.w"], params["dense.b"]))


def temporal_logits(params, spec, feats):
    """Dilated temporal-context stacks plus the kernel-1 classifier head,
    (B, Q, feature_dim) -> (B, Q, classes)."""
    h = feats if isinstance(feats, Tensor) else Tensor(feats)
    for s in range(spec.tcn_stacks):
        for li, d in enumerate(spec.tcn_dilations):
            conv = tc.conv1d(h, params[f"tcn.s{s}.l{li}.w"], params[f"tcn.s{s}.l{li}.b"],
                             dilation=d, padding="same")
            h = h + tc.relu(conv)
    return tc.conv1d(h, params["classifier.w"], params["classifier.b"], padding="same")


def forward_logits(params, spec, batch):
    """Raw class scores, shape (B, Q, classes), for a (B, Q*window_len) batch."""
    return temporal_logits(params, spec, window_features(params, spec, batch))


def forward(params, spec, batch):
    """Per-window class probabilities, shape (B, Q, classes)."""
    return tc.softmax(forward_logits(params, spec, batch))


def count_params(store):
    return store.n_params()


def receptive_field_windows(spec):
    """Width (in windows) of the temporal block's receptive field: each
    same-padded dilated conv grows it by (kernel-1)*dilation."""
    return 1 + spec.tcn_stacks * (spec.tcn_kernel - 1) * sum(spec.tcn_dilations)
