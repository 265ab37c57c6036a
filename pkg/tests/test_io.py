import numpy as np
import pytest

from splatstream import io
from splatstream.io import DataError
from splatstream.renderer import Camera
from splatstream.scene import GaussianSet


def random_f32_set(rng, n=7, sh_degree=2):
    # float32-representable values so checkpoint round trips are bit-exact
    def f32(a):
        return a.astype(np.float32).astype(np.float64)

    return GaussianSet(
        positions=f32(rng.normal(size=(n, 3))),
        rotations=f32(rng.normal(size=(n, 4)) + np.array([2.0, 0, 0, 0])),
        log_scales=f32(rng.normal(size=(n, 3))),
        opacity_logits=f32(rng.normal(size=n)),
        sh_coeffs=f32(rng.normal(size=(n, 3, (sh_degree + 1) ** 2))),
        sh_degree=sh_degree,
    )


class TestPpm:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, size=(9, 11, 3)).astype(np.float64) / io.QUANT
        p = tmp_path / "img.ppm"
        io.write_ppm(p, img)
        back = io.read_ppm(p)
        assert np.array_equal(back, img)
        io.write_ppm(tmp_path / "again.ppm", back)
        assert (tmp_path / "again.ppm").read_bytes() == p.read_bytes()

    def test_truncated(self, tmp_path):
        p = tmp_path / "img.ppm"
        io.write_ppm(p, np.zeros((8, 8, 3)))
        p.write_bytes(p.read_bytes()[:-10])
        with pytest.raises(DataError, match="truncated at byte"):
            io.read_ppm(p)

    def test_unsupported_maxval(self, tmp_path):
        p = tmp_path / "img.ppm"
        p.write_bytes(b"P6\n2 2\n65535\n" + b"\x00" * 24)
        with pytest.raises(DataError, match="unsupported maxval"):
            io.read_ppm(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "img.ppm"
        p.write_bytes(b"P3\n2 2\n255\n" + b"\x00" * 12)
        with pytest.raises(DataError, match="bad magic"):
            io.read_ppm(p)


class TestPgm:
    def test_roundtrip(self, tmp_path):
        mask = np.random.default_rng(1).uniform(size=(6, 7)) > 0.5
        p = tmp_path / "m.pgm"
        io.write_pgm(p, mask)
        assert np.array_equal(io.read_pgm(p), mask)


class TestRig:
    def test_roundtrip(self, tmp_path):
        cams = [Camera(np.eye(3), np.array([0.0, 0, i + 1.0]), 50, 50, 8, 8,
                       16, 16, 0.1) for i in range(3)]
        p = tmp_path / "rig.json"
        io.save_rig(p, cams)
        back = io.load_rig(p)
        assert len(back) == 3
        for a, b in zip(cams, back):
            assert np.array_equal(a.rotation, b.rotation)
            assert np.array_equal(a.translation, b.translation)
            assert (a.fx, a.fy, a.cx, a.cy, a.width, a.height, a.near) == \
                (b.fx, b.fy, b.cx, b.cy, b.width, b.height, b.near)


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(2)
        g = random_f32_set(rng)
        maps = [rng.normal(size=(8, 10, 3)).astype(np.float32).astype(np.float64)
                for _ in range(2)]
        p = tmp_path / "ckpt.or2g"
        io.write_checkpoint(p, g, maps)
        g2, maps2 = io.read_checkpoint(p)
        for name in g.raw_arrays():
            assert np.array_equal(getattr(g, name), getattr(g2, name)), name
        assert g2.sh_degree == g.sh_degree
        assert len(maps2) == 2
        for a, b in zip(maps, maps2):
            assert np.array_equal(a, b)
        io.write_checkpoint(tmp_path / "again.or2g", g2, maps2)
        assert (tmp_path / "again.or2g").read_bytes() == p.read_bytes()

    def test_no_maps(self, tmp_path):
        g = random_f32_set(np.random.default_rng(3))
        p = tmp_path / "ckpt.or2g"
        io.write_checkpoint(p, g, None)
        _, maps = io.read_checkpoint(p)
        assert maps == []

    def test_truncation_reports_offset(self, tmp_path):
        g = random_f32_set(np.random.default_rng(4))
        p = tmp_path / "ckpt.or2g"
        io.write_checkpoint(p, g, None)
        p.write_bytes(p.read_bytes()[:20])
        with pytest.raises(DataError, match="truncated at byte 20"):
            io.read_checkpoint(p)

    def test_future_version_rejected(self, tmp_path):
        g = random_f32_set(np.random.default_rng(5))
        p = tmp_path / "ckpt.or2g"
        io.write_checkpoint(p, g, None)
        raw = bytearray(p.read_bytes())
        raw[4:8] = (99).to_bytes(4, "little")
        p.write_bytes(bytes(raw))
        with pytest.raises(DataError, match="unsupported version 99"):
            io.read_checkpoint(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "ckpt.or2g"
        p.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(DataError, match="bad magic"):
            io.read_checkpoint(p)

    def test_trailing_bytes_rejected(self, tmp_path):
        g = random_f32_set(np.random.default_rng(6))
        p = tmp_path / "ckpt.or2g"
        io.write_checkpoint(p, g, None)
        p.write_bytes(p.read_bytes() + b"\x00")
        with pytest.raises(DataError, match="trailing bytes"):
            io.read_checkpoint(p)


class TestConfig:
    def test_defaults_roundtrip(self, tmp_path):
        cfg = io.default_config()
        cfg["seed"] = 7
        p = tmp_path / "cfg.json"
        io.save_config(p, cfg)
        assert io.load_config(p) == cfg

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text('{"no_such_option": 1}')
        with pytest.raises(DataError, match="unknown config keys: no_such_option"):
            io.load_config(p)

    def test_partial_overrides_defaults(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text('{"seed": 5, "use_residual_maps": false}')
        cfg = io.load_config(p)
        assert cfg["seed"] == 5
        assert cfg["use_residual_maps"] is False
        assert cfg["first_frame_iters"] == 1500
