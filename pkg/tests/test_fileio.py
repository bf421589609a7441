import struct

import numpy as np
import pytest

from gocor.corrvol import CorrespondenceVolume, VolumeKind, global_corr, local_corr
from gocor.errors import FormatError, NonFiniteInputError
from gocor.fileio import (
    decode_feature_map,
    decode_flow,
    decode_volume,
    encode_feature_map,
    encode_flow,
    encode_volume,
    heatmap_bytes,
    load_feature_map,
    load_flow,
    load_volume,
    probe_heatmap,
    read_pgm,
    save_feature_map,
    save_flow,
    save_volume,
    write_pgm,
    write_slice_csv,
)
from gocor.metrics import FlowField


class TestFeatureMapFormat:
    """FMAP files."""

    def test_header_layout(self):
        buf = encode_feature_map(np.zeros((2, 3, 4)))
        assert buf[:4] == b"FMAP"
        assert struct.unpack("<IIIIB", buf[4:21]) == (1, 2, 3, 4, 1)
        assert len(buf) == 21 + 2 * 3 * 4 * 8

    def test_row_major_layout(self):
        f = np.arange(12.0).reshape(2, 3, 2)
        buf = encode_feature_map(f)
        np.testing.assert_array_equal(np.frombuffer(buf[21:], dtype="<f8"), np.arange(12.0))

    def test_save_load_bit_exact(self, tmp_path, rng):
        f = rng.normal(size=(3, 4, 5))
        save_feature_map(tmp_path / "f.fmap", f)
        loaded = load_feature_map(tmp_path / "f.fmap")
        assert loaded.tobytes() == f.tobytes()

    def test_single_precision(self, rng):
        f = rng.normal(size=(2, 2, 3)).astype(np.float32)
        loaded = decode_feature_map(encode_feature_map(f, np.float32))
        assert loaded.dtype == np.float32
        np.testing.assert_array_equal(loaded, f)

    def test_bad_magic(self):
        with pytest.raises(FormatError, match="byte offset 0"):
            decode_feature_map(b"FMAQ" + bytes(17))

    def test_truncated_data_reports_offset(self):
        buf = encode_feature_map(np.ones((2, 2, 2)))
        with pytest.raises(FormatError) as err:
            decode_feature_map(buf[:-3])
        assert err.value.offset == 21

    def test_non_finite_data_rejected(self):
        buf = bytearray(encode_feature_map(np.ones((2, 2, 2))))
        buf[21:29] = struct.pack("<d", float("inf"))
        with pytest.raises(FormatError, match="non-finite") as err:
            decode_feature_map(bytes(buf))
        assert err.value.offset == 21

    def test_zero_dimension(self):
        buf = b"FMAP" + struct.pack("<IIIIB", 1, 2, 0, 2, 1)
        with pytest.raises(FormatError) as err:
            decode_feature_map(buf)
        assert err.value.offset == 12

    def test_unknown_dtype(self):
        buf = b"FMAP" + struct.pack("<IIIIB", 1, 1, 1, 1, 7) + bytes(8)
        with pytest.raises(FormatError) as err:
            decode_feature_map(buf)
        assert err.value.offset == 20

    def test_trailing_bytes(self):
        with pytest.raises(FormatError):
            decode_feature_map(encode_feature_map(np.ones((1, 1, 1))) + b"\x00")


class TestFlowFormat:
    """FLOW files."""

    def test_without_mask(self, tmp_path):
        flow = FlowField(np.array([[[1.5, -2.0], [0.25, 3.0]]]))
        save_flow(tmp_path / "a.flow", flow)
        loaded = load_flow(tmp_path / "a.flow")
        assert loaded.mask is None
        np.testing.assert_array_equal(loaded.flow, flow.flow)

    def test_with_mask(self):
        flow = FlowField(np.zeros((2, 2, 2)), mask=np.array([[True, False], [False, True]]))
        buf = encode_flow(flow)
        assert len(buf) == 12 + 2 * 2 * 2 * 4 + 4
        np.testing.assert_array_equal(decode_flow(buf).mask, flow.mask)

    def test_partial_mask_is_rejected(self):
        buf = encode_flow(FlowField(np.zeros((2, 2, 2)), mask=np.ones((2, 2), dtype=bool)))
        with pytest.raises(FormatError):
            decode_flow(buf[:-1])


class TestVolumeFormat:
    """CVOL files."""

    def test_global_round_trip(self, tmp_path, rng):
        v = global_corr(rng.normal(size=(3, 2, 4)), rng.normal(size=(3, 2, 4)))
        save_volume(tmp_path / "v.cvol", v)
        loaded = load_volume(tmp_path / "v.cvol")
        assert loaded.kind is VolumeKind.GLOBAL
        assert loaded.data.tobytes() == v.data.tobytes()

    def test_local_round_trip(self, rng):
        v = local_corr(rng.normal(size=(4, 3, 2)), rng.normal(size=(4, 3, 2)), 2)
        loaded = decode_volume(encode_volume(v))
        assert loaded.kind is VolumeKind.LOCAL and loaded.radius == 2
        np.testing.assert_array_equal(loaded.data, v.data)

    def test_single_precision_storage(self, rng):
        v = global_corr(rng.normal(size=(2, 2, 3)), rng.normal(size=(2, 2, 3)))
        buf = encode_volume(v, np.float32)
        assert len(buf) == 4 + struct.calcsize("<IBIIIB") + 16 * 4
        np.testing.assert_allclose(decode_volume(buf).data, v.data, rtol=1e-6)

    def test_unknown_kind(self):
        buf = b"CVOL" + struct.pack("<IBIIIB", 1, 5, 1, 1, 0, 1) + bytes(8)
        with pytest.raises(FormatError) as err:
            decode_volume(buf)
        assert err.value.offset == 8

    def test_bad_version(self):
        buf = b"CVOL" + struct.pack("<IBIIIB", 2, 0, 1, 1, 0, 1) + bytes(8)
        with pytest.raises(FormatError, match="version"):
            decode_volume(buf)

    def test_non_finite_data_rejected(self, rng):
        v = global_corr(rng.normal(size=(2, 2, 3)), rng.normal(size=(2, 2, 3)))
        buf = bytearray(encode_volume(v))
        buf[22 + 8:22 + 16] = struct.pack("<d", float("nan"))
        with pytest.raises(FormatError, match="non-finite") as err:
            decode_volume(bytes(buf))
        assert err.value.offset == 22

    def test_encode_rejects_non_finite(self):
        data = np.zeros((1, 1, 1, 1))
        data[0, 0, 0, 0] = np.inf
        with pytest.raises(NonFiniteInputError):
            encode_volume(CorrespondenceVolume(VolumeKind.GLOBAL, data))


class TestHeatmap:
    """Probe-slice images and CSV export."""

    def test_one_hot_slice(self):
        scores = np.zeros((3, 3))
        scores[1, 2] = 4.0
        image = heatmap_bytes(scores)
        assert image[1, 2] == 255
        assert np.count_nonzero(image) == 1

    def test_constant_slice_is_black(self):
        np.testing.assert_array_equal(heatmap_bytes(np.full((4, 4), 0.7)), 0)

    def test_pgm_round_trip(self, tmp_path):
        image = np.arange(12, dtype=np.uint8).reshape(3, 4) * 20
        write_pgm(tmp_path / "h.pgm", image)
        raw = (tmp_path / "h.pgm").read_bytes()
        assert raw.startswith(b"P5\n4 3\n255\n")
        np.testing.assert_array_equal(read_pgm(tmp_path / "h.pgm"), image)

    def test_probe_heatmap_is_deterministic(self, tmp_path, rng):
        v = global_corr(rng.normal(size=(4, 4, 3)), rng.normal(size=(4, 4, 3)))
        for name in ("a.pgm", "b.pgm"):
            write_pgm(tmp_path / name, probe_heatmap(v, 1, 2)[1])
        assert (tmp_path / "a.pgm").read_bytes() == (tmp_path / "b.pgm").read_bytes()

    def test_probe_out_of_bounds(self):
        v = CorrespondenceVolume(VolumeKind.GLOBAL, np.zeros((2, 2, 2, 2)))
        with pytest.raises(ValueError):
            probe_heatmap(v, 2, 0)

    def test_slice_csv(self, tmp_path):
        scores = np.array([[0.1, 1.0 / 3.0], [-2.0, 5e-20]])
        write_slice_csv(tmp_path / "s.csv", scores)
        loaded = np.loadtxt(tmp_path / "s.csv", delimiter=",")
        np.testing.assert_array_equal(loaded, scores)

    def test_not_a_pgm(self, tmp_path):
        (tmp_path / "x.pgm").write_bytes(b"P2\n1 1\n255\n0")
        with pytest.raises(FormatError):
            read_pgm(tmp_path / "x.pgm")
