import numpy as np
import pytest

from sctlab.core import (
    SinogramStack,
    SpectralStack,
    StackFormatError,
    default_energies,
    export_pgm,
    normalize_stack,
    read_stack,
    write_stack,
)
from sctlab.geometry import music_geometry


def test_roundtrip_small_stack(tmp_path):
    stack = SpectralStack(
        np.array([0.0, 1.0, 2.0, 3.0]).reshape(1, 2, 2), energies=(70.0,)
    )
    path = tmp_path / "tiny.scts"
    write_stack(stack, path)
    # header: magic(4) + version(2) + kind(1) + dtype(1) + dims(12) = 20 bytes
    assert path.stat().st_size == 20 + 16
    back = read_stack(path)
    assert isinstance(back, SpectralStack)
    assert np.array_equal(back.values, stack.values)
    assert back.energies == stack.energies


def test_write_empty_path_errors():
    stack = SpectralStack(np.zeros((1, 2, 2)), energies=(70.0,))
    with pytest.raises(ValueError):
        write_stack(stack, "")


def test_write_missing_parent_errors(tmp_path):
    stack = SpectralStack(np.zeros((1, 2, 2)), energies=(70.0,))
    with pytest.raises(FileNotFoundError):
        write_stack(stack, tmp_path / "nope" / "x.scts")


def test_roundtrip_large_synthetic_stack(tmp_path):
    rng = np.random.Generator(np.random.Philox(key=5))
    values = rng.random((64, 256, 256)) * 0.03
    stack = SpectralStack(values, default_energies(64))
    path = tmp_path / "big.scts"
    write_stack(stack, path)
    back = read_stack(path)
    # payload is float32; read-back equals the float32 rounding bit-exactly
    assert np.array_equal(back.values, values.astype(np.float32).astype(np.float64))


def test_sinogram_roundtrip_preserves_geometry(tmp_path):
    geom = music_geometry(image_size=32, n_angles=7)
    sino = SinogramStack(
        np.linspace(0, 1, 2 * 7 * geom.detector_bins).reshape(2, 7, -1),
        geom,
        energies=(60.0, 70.0),
        provenance="test",
    )
    path = tmp_path / "sino.scts"
    write_stack(sino, path)
    back = read_stack(path)
    assert isinstance(back, SinogramStack)
    assert back.geometry == geom
    assert back.energies == (60.0, 70.0)
    assert back.provenance == "test"


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.scts"
    path.write_bytes(b"XXXX" + b"\x00" * 32)
    with pytest.raises(StackFormatError, match="magic"):
        read_stack(path)


def test_truncated_payload(tmp_path):
    stack = SpectralStack(np.zeros((1, 4, 4)), energies=(70.0,))
    path = tmp_path / "trunc.scts"
    write_stack(stack, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(StackFormatError, match="truncated"):
        read_stack(path)


def test_nan_payload_rejected(tmp_path):
    stack = SpectralStack(np.zeros((1, 2, 2)), energies=(70.0,))
    path = tmp_path / "nan.scts"
    write_stack(stack, path)
    raw = bytearray(path.read_bytes())
    raw[20:24] = np.array([np.nan], dtype="<f4").tobytes()
    path.write_bytes(bytes(raw))
    with pytest.raises(StackFormatError, match="non-finite"):
        read_stack(path)


def test_file_roundtrip_is_byte_identical(tmp_path):
    rng = np.random.Generator(np.random.Philox(key=6))
    stack = SpectralStack(rng.random((3, 8, 8)), default_energies(3))
    p1, p2 = tmp_path / "a.scts", tmp_path / "b.scts"
    write_stack(stack, p1)
    write_stack(read_stack(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_normalize_global_max():
    stack = SpectralStack(np.array([0.0, 2.0, 4.0]).reshape(1, 1, 3), (70.0,))
    normed, scale = normalize_stack(stack, "global_max")
    assert scale == 4.0
    assert np.array_equal(normed.values, [[[0.0, 0.5, 1.0]]])


def test_normalize_none_is_identity():
    stack = SpectralStack(np.array([[[1.0, -2.0]]]), (70.0,))
    normed, scale = normalize_stack(stack, "none")
    assert scale == 1.0
    assert np.array_equal(normed.values, stack.values)


def test_normalize_all_zero_errors():
    stack = SpectralStack(np.zeros((1, 2, 2)), (70.0,))
    with pytest.raises(ValueError):
        normalize_stack(stack, "global_max")


def test_normalize_roundtrip_within_ulp():
    rng = np.random.Generator(np.random.Philox(key=7))
    values = rng.standard_normal((4, 6, 6)) * 0.03
    stack = SpectralStack(values, default_energies(4))
    normed, scale = normalize_stack(stack)
    restored = normed.values * scale
    ulp = np.spacing(np.abs(values).astype(np.float32)).astype(np.float64)
    assert np.all(np.abs(restored - values) <= ulp + 1e-300)


def test_energies_default_span():
    energies = default_energies(64)
    assert len(energies) == 64
    assert energies[0] == 55.0
    assert energies[-1] == 124.0
    assert all(b > a for a, b in zip(energies, energies[1:]))


def test_invariants_rejected():
    with pytest.raises(ValueError):
        SpectralStack(np.zeros((2, 2, 2)), energies=(70.0, 60.0))  # not increasing
    with pytest.raises(ValueError):
        SpectralStack(np.full((1, 2, 2), np.nan), energies=(70.0,))
    with pytest.raises(ValueError):
        SpectralStack(np.zeros((2, 2, 2)), energies=(70.0,))  # count mismatch


def test_pgm_export(tmp_path):
    img = np.linspace(0, 1, 16).reshape(4, 4)
    path = tmp_path / "img.pgm"
    export_pgm(img, path)
    raw = path.read_bytes()
    assert raw.startswith(b"P5\n4 4\n255\n")
    assert len(raw) == len(b"P5\n4 4\n255\n") + 16
