import struct

import numpy as np
import pytest

from psbrdf.errors import FormatError
from psbrdf.merl import (
    CHANNEL_SCALES,
    DIMS,
    decode_merl,
    encode_merl,
    load_merl,
)


def make_raw(fill=0.0):
    return np.full((3, *DIMS), fill, dtype=np.float64)


class TestCodec:
    def test_zero_payload_gives_zero_brdf(self):
        brdf = load_merl(encode_merl(make_raw(0.0)))
        assert brdf.channels == 3
        assert brdf.grid.size == 1_458_000
        assert np.all(brdf.values == 0.0)

    def test_wrong_header_rejected(self):
        data = struct.pack("<3i", 45, 90, 180) + b"\0" * 64
        with pytest.raises(FormatError, match="dimensions"):
            decode_merl(data)

    def test_truncated_payload_rejected(self):
        good = encode_merl(make_raw())
        with pytest.raises(FormatError, match="truncated"):
            decode_merl(good[: len(good) // 2])

    def test_roundtrip_bit_exact(self):
        rng = np.random.default_rng(0)
        raw = rng.normal(size=(3, *DIMS)).astype(np.float64)
        recovered = decode_merl(encode_merl(raw))
        assert recovered.tobytes() == raw.tobytes()

    def test_channel_scales_applied(self):
        raw = make_raw(1.0)
        brdf = load_merl(encode_merl(raw))
        vals = brdf.values.reshape(3, *DIMS)
        for c, scale in enumerate(CHANNEL_SCALES):
            np.testing.assert_allclose(vals[c], scale)

    def test_negative_values_clamped(self):
        raw = make_raw(-5.0)
        brdf = load_merl(encode_merl(raw))
        assert np.all(brdf.values == 0.0)

    def test_theta_h_resampling_interpolates(self):
        # stored sample i sits at theta = i^2/90; make a ramp in stored index
        raw = make_raw()
        ramp = np.arange(DIMS[0], dtype=np.float64)
        raw[:] = ramp[None, :, None, None]
        brdf = load_merl(encode_merl(raw))
        vals = brdf.values.reshape(3, *DIMS)[0, :, 0, 0] / CHANNEL_SCALES[0]
        # linear node at j degrees must land between its bracketing samples
        stored_theta = ramp**2 / 90.0
        for j in (0, 1, 10, 45, 88):
            i = np.searchsorted(stored_theta, j, side="right") - 1
            assert vals[j] >= i - 1e-9
            assert vals[j] <= min(i + 1, DIMS[0] - 1) + 1e-9
        assert vals[0] == pytest.approx(0.0, abs=1e-12)
