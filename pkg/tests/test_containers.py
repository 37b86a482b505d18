import numpy as np
import pytest

from ppgsleep import containers, superwin
from ppgsleep import tensorcore as tc
from ppgsleep.containers import (load_checkpoint, read_grid, read_labels_csv,
                                 read_signal, read_super_windows,
                                 save_checkpoint, write_grid, write_labels_csv,
                                 write_signal, write_super_windows)
from ppgsleep.errors import (BadMagicError, ContainerError, SpecMismatchError,
                             TruncatedFileError, UnsupportedVersionError)
from ppgsleep.model import ModelSpec, forward_logits, init_params
from ppgsleep.sigprep import WindowGrid

TINY = ModelSpec(feature_filters=(2, 2), window_len=8, feature_dim=3,
                 tcn_kernel=3, tcn_filters=3, tcn_dilations=(1,), tcn_stacks=1)


class TestSignalContainer:
    def test_roundtrip(self, tmp_path):
        path = tmp_path / "a.ppgs"
        x = np.random.default_rng(0).standard_normal(1000).astype(np.float32)
        write_signal(path, x, 64.0)
        y, rate = read_signal(path)
        assert rate == 64.0
        assert y.tobytes() == x.tobytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ppgs"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(BadMagicError):
            read_signal(path)

    def test_unknown_version(self, tmp_path):
        path = tmp_path / "v9.ppgs"
        good = tmp_path / "good.ppgs"
        write_signal(good, np.zeros(4, np.float32), 10.0)
        raw = bytearray(good.read_bytes())
        raw[4:6] = (9).to_bytes(2, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(UnsupportedVersionError):
            read_signal(path)

    def test_truncation(self, tmp_path):
        good = tmp_path / "good.ppgs"
        write_signal(good, np.zeros(100, np.float32), 10.0)
        trunc = tmp_path / "trunc.ppgs"
        trunc.write_bytes(good.read_bytes()[:-17])
        with pytest.raises(TruncatedFileError):
            read_signal(trunc)

    def test_trailing_garbage(self, tmp_path):
        good = tmp_path / "g.ppgs"
        write_signal(good, np.zeros(8, np.float32), 10.0)
        (tmp_path / "t.ppgs").write_bytes(good.read_bytes() + b"x")
        with pytest.raises(ContainerError):
            read_signal(tmp_path / "t.ppgs")


def make_grid(w=9, width=8, subject="s1"):
    rng = np.random.default_rng(w)
    labels = rng.integers(-1, 4, w).astype(np.int8)
    return WindowGrid(windows=rng.standard_normal((w, width)).astype(np.float32),
                      labels=labels, valid=labels >= 0, subject_id=subject)


class TestGridContainer:
    def test_roundtrip(self, tmp_path):
        grid = make_grid()
        path = tmp_path / "g.ppgg"
        write_grid(path, grid)
        again = read_grid(path)
        assert again.subject_id == grid.subject_id
        assert again.windows.tobytes() == grid.windows.tobytes()
        np.testing.assert_array_equal(again.labels, grid.labels)
        np.testing.assert_array_equal(again.valid, grid.valid)

    def test_truncation(self, tmp_path):
        path = tmp_path / "g.ppgg"
        write_grid(path, make_grid())
        (tmp_path / "t.ppgg").write_bytes(path.read_bytes()[:-5])
        with pytest.raises(TruncatedFileError):
            read_grid(tmp_path / "t.ppgg")


class TestSuperWindowContainer:
    def test_roundtrip_with_spec_metadata(self, tmp_path):
        grid = make_grid(w=130)
        swset = superwin.build_for_config(grid, "c05")
        path = tmp_path / "s.ppgx"
        write_super_windows(path, swset)
        again = read_super_windows(path)
        assert again.spec == swset.spec
        assert len(again) == len(swset)
        for a, b in zip(again, swset):
            assert a.subject_id == b.subject_id
            assert a.windows.tobytes() == b.windows.tobytes()
            np.testing.assert_array_equal(a.source_indices, b.source_indices)
            np.testing.assert_array_equal(a.valid, b.valid)

    def test_empty_set_rejected(self, tmp_path):
        swset = superwin.SuperWindowSet(
            spec=superwin.SuperWindowSpec(kind="contiguous", n=2))
        with pytest.raises(ContainerError):
            write_super_windows(tmp_path / "e.ppgx", swset)


class TestCheckpoint:
    def test_roundtrip_bytes_identical(self, tmp_path):
        store = init_params(TINY, 3)
        a = tmp_path / "a.ckpt"
        b = tmp_path / "b.ckpt"
        save_checkpoint(a, store, TINY, train_seed=3, epoch=7)
        loaded, spec, meta = load_checkpoint(a)
        assert spec == TINY
        assert meta["train_seed"] == 3 and meta["epoch"] == 7
        save_checkpoint(b, loaded, spec, train_seed=3, epoch=7)
        assert a.read_bytes() == b.read_bytes()

    def test_forward_bit_exact_after_reload(self, tmp_path):
        store = init_params(TINY, 4)
        rng = np.random.default_rng(5)
        store["classifier.w"].data[:] = rng.standard_normal(
            store["classifier.w"].data.shape).astype(np.float32)
        x = rng.standard_normal((2, 2 * TINY.window_len)).astype(np.float32)
        with tc.no_grad():
            before = forward_logits(store, TINY, x).data
        path = tmp_path / "c.ckpt"
        save_checkpoint(path, store, TINY)
        loaded, spec, _ = load_checkpoint(path)
        with tc.no_grad():
            after = forward_logits(loaded, spec, x).data
        assert before.tobytes() == after.tobytes()

    def test_optimizer_state_preserved(self, tmp_path):
        store = init_params(TINY, 6)
        grads = {n: np.ones_like(t.data) for n, t in store.params.items()}
        tc.adam_step(store, grads)
        tc.adam_step(store, grads)
        path = tmp_path / "d.ckpt"
        save_checkpoint(path, store, TINY)
        loaded, _, _ = load_checkpoint(path)
        assert loaded.step == 2
        for n in store.params:
            assert loaded.m[n].tobytes() == store.m[n].tobytes()
            assert loaded.v[n].tobytes() == store.v[n].tobytes()

    def test_spec_mismatch_rejected(self, tmp_path):
        store = init_params(TINY, 3)
        path = tmp_path / "e.ckpt"
        save_checkpoint(path, store, TINY)
        with pytest.raises(SpecMismatchError):
            load_checkpoint(path, expect_spec=ModelSpec.reduced_width())

    def test_truncation_is_an_error_not_a_crash(self, tmp_path):
        store = init_params(TINY, 3)
        path = tmp_path / "f.ckpt"
        save_checkpoint(path, store, TINY)
        for cut in (10, 100, -20):
            bad = tmp_path / f"f{cut}.ckpt"
            bad.write_bytes(path.read_bytes()[:cut])
            with pytest.raises(TruncatedFileError):
                load_checkpoint(bad)

    def test_float64_store_rejected(self, tmp_path):
        store = init_params(TINY, 3, dtype=np.float64)
        with pytest.raises(ContainerError):
            save_checkpoint(tmp_path / "g.ckpt", store, TINY)


class TestLabelsCsv:
    def test_roundtrip(self, tmp_path):
        codes = ["W", "N1", "?", "N3", "R"]
        path = tmp_path / "l.csv"
        write_labels_csv(path, codes)
        assert read_labels_csv(path) == codes

    def test_bad_header(self, tmp_path):
        path = tmp_path / "b.csv"
        path.write_text("foo,bar\n0,W\n")
        with pytest.raises(ContainerError):
            read_labels_csv(path)

    def test_gap_in_indices(self, tmp_path):
        path = tmp_path / "g.csv"
        path.write_text("epoch_index,aasm_code\n0,W\n2,N1\n")
        with pytest.raises(ContainerError):
            read_labels_csv(path)


class TestJsonDoc:
    def test_canonical_bytes(self, tmp_path):
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        containers.write_json_doc(a, {"z": 1, "a": [1.5, 2]})
        containers.write_json_doc(b, {"a": [1.5, 2], "z": 1})
        assert a.read_bytes() == b.read_bytes()
        assert containers.read_json_doc(a) == {"z": 1, "a": [1.5, 2]}
