"""Bit-exact on-disk formats.

Four binary containers, all little-endian and self-describing (magic +
version + declared counts, validated on read):

* ``PPGS`` signal: sample rate f64, count u64, float32 samples
* ``PPGG`` window grid: subject id, W x width float32 rows + labels + valid
* ``PPGX`` super-window set: JSON header with the arrangement spec, then one
  record per super-window (source indices included, so provenance survives)
* ``SPNW`` checkpoint: JSON header echoing the model spec and training
  metadata, then named float32 tensors for parameters and both Adam moments

Plus label CSVs (epoch_index, aasm_code) and canonical JSON documents
(sorted keys, trailing newline) so identical runs produce identical bytes.
"""

import csv
import json
import struct

import numpy as np

from .errors import (BadMagicError, ContainerError, SpecMismatchError,
                     TruncatedFileError, UnsupportedVersionError)
from .model import ModelSpec
from .superwin import SuperWindow, SuperWindowSet, SuperWindowSpec
from .tensorcore import ParamStore
from .sigprep import WindowGrid

MAGIC_SIGNAL = b"PPGS"
MAGIC_GRID = b"PPGG"
MAGIC_SWSET = b"PPGX"
MAGIC_CHECKPOINT = b"SPNW"
FORMAT_VERSION = 1


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise TruncatedFileError(f"file ended while reading {what} "
                                 f"(wanted {n} bytes, got {len(buf)})")
    return buf


def _expect_magic(f, magic):
    got = f.read(len(magic))
    if got != magic:
        raise BadMagicError(f"bad magic {got!r}, expected {magic!r}")


def _read_version(f):
    (version,) = struct.unpack("<H", _read_exact(f, 2, "version"))
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"container version {version} not supported")
    return version


def _write_str(f, s):
    raw = s.encode("utf-8")
    f.write(struct.pack("<H", len(raw)))
    f.write(raw)


def _read_str(f, what="string"):
    (n,) = struct.unpack("<H", _read_exact(f, 2, f"{what} length"))
    return _read_exact(f, n, what).decode("utf-8")


def _read_array(f, dtype, count, what):
    dt = np.dtype(dtype)
    return np.frombuffer(_read_exact(f, dt.itemsize * count, what), dtype=dt).copy()


# ---------------------------------------------------------------- signals

def write_signal(path, samples, sample_rate_hz):
    samples = np.asarray(samples, dtype="<f4")
    with open(path, "wb") as f:
        f.write(MAGIC_SIGNAL)
        f.write(struct.pack("<H", FORMAT_VERSION))
        f.write(struct.pack("<d", float(sample_rate_hz)))
        f.write(struct.pack("<Q", samples.size))
        f.write(samples.tobytes())


def read_signal(path):
    """-> (samples float32, sample_rate_hz)."""
    with open(path, "rb") as f:
        _expect_magic(f, MAGIC_SIGNAL)
        _read_version(f)
        (rate,) = struct.unpack("<d", _read_exact(f, 8, "sample rate"))
        (count,) = struct.unpack("<Q", _read_exact(f, 8, "sample count"))
        samples = _read_array(f, "<f4", count, "samples")
        if f.read(1):
            raise ContainerError("trailing bytes after declared samples")
    return samples, rate


# ------------------------------------------------------------ window grids

def write_grid(path, grid):
    w, width = grid.windows.shape
    with open(path, "wb") as f:
        f.write(MAGIC_GRID)
        f.write(struct.pack("<H", FORMAT_VERSION))
        _write_str(f, grid.subject_id)
        f.write(struct.pack("<II", w, width))
        f.write(np.asarray(grid.labels, dtype="<i1").tobytes())
        f.write(np.asarray(grid.valid, dtype="<u1").tobytes())
        f.write(np.asarray(grid.windows, dtype="<f4").tobytes())


def read_grid(path):
    with open(path, "rb") as f:
        _expect_magic(f, MAGIC_GRID)
        _read_version(f)
        subject_id = _read_str(f, "subject id")
        w, width = struct.unpack("<II", _read_exact(f, 8, "grid shape"))
        labels = _read_array(f, "<i1", w, "labels")
        valid = _read_array(f, "<u1", w, "valid flags").astype(bool)
        windows = _read_array(f, "<f4", w * width, "windows").reshape(w, width)
    return WindowGrid(windows=windows, labels=labels, valid=valid, subject_id=subject_id)


# -------------------------------------------------------- super-window sets

def write_super_windows(path, swset):
    if not swset.items:
        raise ContainerError("refusing to write an empty super-window set")
    width = swset.items[0].windows.shape[1]
    header = json.dumps({"spec": swset.spec.to_dict(), "count": len(swset.items),
                         "width": width}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC_SWSET)
        f.write(struct.pack("<H", FORMAT_VERSION))
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for sw in swset.items:
            _write_str(f, sw.subject_id)
            f.write(np.asarray(sw.labels, dtype="<i1").tobytes())
            f.write(np.asarray(sw.valid, dtype="<u1").tobytes())
            f.write(np.asarray(sw.source_indices, dtype="<i8").tobytes())
            f.write(np.asarray(sw.windows, dtype="<f4").tobytes())


def read_super_windows(path):
    with open(path, "rb") as f:
        _expect_magic(f, MAGIC_SWSET)
        _read_version(f)
        (hlen,) = struct.unpack("<I", _read_exact(f, 4, "header length"))
        header = json.loads(_read_exact(f, hlen, "header"))
        spec = SuperWindowSpec.from_dict(header["spec"])
        width = int(header["width"])
        items = []
        for _ in range(int(header["count"])):
            subject_id = _read_str(f, "subject id")
            labels = _read_array(f, "<i1", spec.n, "labels")
            valid = _read_array(f, "<u1", spec.n, "valid flags").astype(bool)
            src = _read_array(f, "<i8", spec.n, "source indices")
            windows = _read_array(f, "<f4", spec.n * width,
                                  "windows").reshape(spec.n, width)
            items.append(SuperWindow(windows=windows, labels=labels, valid=valid,
                                     source_indices=src, subject_id=subject_id))
    return SuperWindowSet(spec=spec, items=items)


# -------------------------------------------------------------- checkpoints

def _write_tensor_block(f, arrays):
    f.write(struct.pack("<I", len(arrays)))
    for name, a in arrays.items():
        if a.dtype != np.float32:
            raise ContainerError(
                f"checkpoint tensors are 32-bit; {name!r} is {a.dtype}")
        _write_str(f, name)
        f.write(struct.pack("<B", a.ndim))
        f.write(struct.pack(f"<{a.ndim}I", *a.shape))
        f.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def _read_tensor_block(f):
    (count,) = struct.unpack("<I", _read_exact(f, 4, "tensor count"))
    out = {}
    for _ in range(count):
        name = _read_str(f, "tensor name")
        (ndim,) = struct.unpack("<B", _read_exact(f, 1, "tensor rank"))
        shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim, "tensor shape"))
        size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        out[name] = _read_array(f, "<f4", size, f"tensor {name!r}").reshape(shape)
    return out


def save_checkpoint(path, store, spec, train_seed=None, epoch=None):
    """Write parameters + Adam state; reloading reproduces forward outputs
    bit-exactly (everything is float32 on both sides)."""
    header = json.dumps({
        "model_spec": spec.to_dict(),
        "train_seed": train_seed,
        "epoch": epoch,
        "adam_step": store.step,
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC_CHECKPOINT)
        f.write(struct.pack("<H", FORMAT_VERSION))
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        _write_tensor_block(f, {n: t.data for n, t in store.params.items()})
        _write_tensor_block(f, store.m)
        _write_tensor_block(f, store.v)


def load_checkpoint(path, expect_spec=None):
    """-> (ParamStore, ModelSpec, meta dict). ``expect_spec`` guards against
    loading weights into a different architecture."""
    with open(path, "rb") as f:
        _expect_magic(f, MAGIC_CHECKPOINT)
        _read_version(f)
        (hlen,) = struct.unpack("<I", _read_exact(f, 4, "header length"))
        meta = json.loads(_read_exact(f, hlen, "header"))
        spec = ModelSpec.from_dict(meta["model_spec"])
        if expect_spec is not None and spec != expect_spec:
            raise SpecMismatchError(
                f"checkpoint was trained with {spec}, expected {expect_spec}")
        params = _read_tensor_block(f)
        m = _read_tensor_block(f)
        v = _read_tensor_block(f)
    if set(m) != set(params) or set(v) != set(params):
        raise ContainerError("optimizer state does not cover the parameters")
    store = ParamStore()
    for name, a in params.items():
        store.add(name, a)
        if m[name].shape != a.shape or v[name].shape != a.shape:
            raise ContainerError(f"moment shape mismatch for {name!r}")
        store.m[name] = m[name]
        store.v[name] = v[name]
    store.step = int(meta["adam_step"])
    return store, spec, meta


# ------------------------------------------------------------ labels + JSON

def write_labels_csv(path, codes):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch_index", "aasm_code"])
        for i, code in enumerate(codes):
            writer.writerow([i, code])


def read_labels_csv(path):
    """Codes ordered by epoch index; indices must be 0..n-1, each once."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["epoch_index", "aasm_code"]:
            raise ContainerError(f"{path}: expected 'epoch_index,aasm_code' header")
        rows = [(int(r[0]), r[1]) for r in reader if r]
    rows.sort()
    if [i for i, _ in rows] != list(range(len(rows))):
        raise ContainerError(f"{path}: epoch indices must be 0..n-1 without gaps")
    return [code for _, code in rows]


def write_json_doc(path, obj):
    """Canonical JSON: sorted keys, two-space indent, newline-terminated —
    identical content yields identical bytes."""
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def read_json_doc(path):
    with open(path) as f:
        return json.load(f)
