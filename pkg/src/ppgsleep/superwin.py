"""Arrange window grids into model inputs (super-windows).

Five named configurations:

* c01 - the whole night as one input, truncated/zero-padded to 1200 windows
* c02/c03/c04 - consecutive non-overlapping blocks of 120 / 60 / 2 windows,
  final partial block zero-padded and masked
* c05 - sparse pick of 4 windows spaced 30 apart (one every 15 minutes),
  one overlapping super-window per start index

Padded rows are exactly zero, carry source index -1, and are never valid.
Super-windows never cross subjects.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSpecError
from .traineval import UNSCORED

C01_WINDOWS = 1200  # 10 h of 30 s windows

CONFIG_IDS = ("c01", "c02", "c03", "c04", "c05")


@dataclass(frozen=True)
class SuperWindowSpec:
    """kind: c01 | contiguous | sparse; n: windows per super-window;
    stride_windows: sparse spacing; overlap_step: start-index step (1 for the
    overlapping sparse build, n for contiguous blocks)."""
    kind: str
    n: int
    stride_windows: int = 1
    overlap_step: int = 1

    def __post_init__(self):
        if self.kind not in ("c01", "contiguous", "sparse"):
            raise InvalidSpecError(f"unknown super-window kind {self.kind!r}")
        if self.n < 1 or self.stride_windows < 1:
            raise InvalidSpecError("n and stride_windows must be >= 1")
        if self.kind == "c01" and self.n != C01_WINDOWS:
            raise InvalidSpecError(f"c01 is fixed at {C01_WINDOWS} windows")

    def to_dict(self):
        return {"kind": self.kind, "n": self.n,
                "stride_windows": self.stride_windows,
                "overlap_step": self.overlap_step}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class SuperWindow:
    """windows: (n, 1024); labels/valid/source_indices: (n,). A source index
    of -1 marks a padding row."""
    windows: np.ndarray
    labels: np.ndarray
    valid: np.ndarray
    source_indices: np.ndarray
    subject_id: str


@dataclass
class SuperWindowSet:
    spec: SuperWindowSpec
    items: list = field(default_factory=list)

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def extend(self, other):
        if other.spec != self.spec:
            raise InvalidSpecError("cannot merge super-window sets with different specs")
        self.items.extend(other.items)

    def subjects(self):
        seen = dict.fromkeys(sw.subject_id for sw in self.items)
        return list(seen)

    def stacked(self, dtype=np.float32):
        """(S, n*width) signals, (S, n) labels, (S, n) valid — training layout."""
        if not self.items:
            raise InvalidSpecError("empty super-window set")
        n = self.spec.n
        width = self.items[0].windows.shape[1]
        x = np.empty((len(self.items), n * width), dtype=dtype)
        labels = np.empty((len(self.items), n), dtype=np.int8)
        valid = np.empty((len(self.items), n), dtype=bool)
        for i, sw in enumerate(self.items):
            x[i] = sw.windows.reshape(-1)
            labels[i] = sw.labels
            valid[i] = sw.valid
        return x, labels, valid


def _slice_super_window(grid, indices):
    """Assemble one super-window from grid rows; index -1 pads with zeros."""
    indices = np.asarray(indices, dtype=np.int64)
    n = indices.size
    width = grid.windows.shape[1]
    windows = np.zeros((n, width), dtype=grid.windows.dtype)
    labels = np.full(n, UNSCORED, dtype=np.int8)
    valid = np.zeros(n, dtype=bool)
    real = indices >= 0
    windows[real] = grid.windows[indices[real]]
    labels[real] = grid.labels[indices[real]]
    valid[real] = grid.valid[indices[real]]
    return SuperWindow(windows=windows, labels=labels, valid=valid,
                       source_indices=indices, subject_id=grid.subject_id)


def build_c01(grid):
    """One super-window per subject: first 1200 windows, zero-padded if the
    night is shorter."""
    w = grid.n_windows
    indices = np.full(C01_WINDOWS, -1, dtype=np.int64)
    keep = min(w, C01_WINDOWS)
    indices[:keep] = np.arange(keep)
    spec = SuperWindowSpec(kind="c01", n=C01_WINDOWS, overlap_step=C01_WINDOWS)
    return SuperWindowSet(spec=spec, items=[_slice_super_window(grid, indices)])


def build_contiguous(grid, n):
    """Consecutive non-overlapping blocks of n windows; ceil(W/n) of them,
    the last one padded."""
    if n < 1:
        raise InvalidSpecError(f"windows per super-window must be >= 1, got {n}")
    w = grid.n_windows
    count = -(-w // n)
    spec = SuperWindowSpec(kind="contiguous", n=n, overlap_step=n)
    items = []
    for i in range(count):
        indices = np.arange(i * n, (i + 1) * n, dtype=np.int64)
        indices[indices >= w] = -1
        items.append(_slice_super_window(grid, indices))
    return SuperWindowSet(spec=spec, items=items)


def build_sparse(grid, k=4, stride=30):
    """One super-window per start index i: windows {i, i+stride, ...,
    i+(k-1)*stride}. Empty set when the grid cannot span the pattern."""
    if k < 2:
        raise InvalidSpecError(f"sparse super-windows need k >= 2, got {k}")
    if stride < 1:
        raise InvalidSpecError(f"stride must be >= 1, got {stride}")
    w = grid.n_windows
    count = max(0, w - (k - 1) * stride)
    spec = SuperWindowSpec(kind="sparse", n=k, stride_windows=stride, overlap_step=1)
    items = [_slice_super_window(grid, np.arange(i, i + k * stride, stride, dtype=np.int64))
             for i in range(count)]
    return SuperWindowSet(spec=spec, items=items)


def spec_for_config(config_id):
    """SuperWindowSpec for one of the named configurations c01..c05."""
    table = {
        "c01": SuperWindowSpec(kind="c01", n=C01_WINDOWS, overlap_step=C01_WINDOWS),
        "c02": SuperWindowSpec(kind="contiguous", n=120, overlap_step=120),
        "c03": SuperWindowSpec(kind="contiguous", n=60, overlap_step=60),
        "c04": SuperWindowSpec(kind="contiguous", n=2, overlap_step=2),
        "c05": SuperWindowSpec(kind="sparse", n=4, stride_windows=30, overlap_step=1),
    }
    if config_id not in table:
        raise InvalidSpecError(f"unknown configuration {config_id!r} (want c01..c05)")
    return table[config_id]


def build_for_config(grid, config_id):
    spec = spec_for_config(config_id)
    if spec.kind == "c01":
        return build_c01(grid)
    if spec.kind == "contiguous":
        return build_contiguous(grid, spec.n)
    return build_sparse(grid, k=spec.n, stride=spec.stride_windows)


def build_set(grids, config_id):
    """Build and concatenate super-windows for many grids (subject order,
    then start index)."""
    out = None
    for grid in grids:
        part = build_for_config(grid, config_id)
        if out is None:
            out = part
        else:
            out.extend(part)
    if out is None:
        raise InvalidSpecError("no grids supplied")
    return out
