import numpy as np
import pytest

from lowbend.exceptions import DatasetLoadError, ShapeError
from lowbend.imaging import Image, make_dataset, make_triplet
from lowbend.triplet_store import HEADER, read_dataset, read_header, write_dataset, write_pnm


@pytest.fixture
def triplets(rng):
    spec = make_dataset("r", resolution=8)
    return [make_triplet(spec.manifold, spec.renderer, spec.epsilon, rng) for _ in range(5)]


def test_dataset_file_keeps_triplets(tmp_path, triplets):
    path = str(tmp_path / "data.lbld")
    write_dataset(path, triplets)
    header = read_header(path)
    assert int(header["count"]) == 5
    assert (int(header["width"]), int(header["height"]), int(header["channels"])) == (8, 8, 3)
    loaded = read_dataset(path)
    assert len(loaded) == 5
    for a, b in zip(triplets, loaded):
        assert b.dist == a.dist
        np.testing.assert_allclose(b.img_av.pixels, a.img_av.pixels, atol=1e-7)


def test_empty_dataset_is_rejected(tmp_path):
    with pytest.raises(ShapeError):
        write_dataset(str(tmp_path / "empty.lbld"), [])


def test_bad_files(tmp_path, triplets):
    path = tmp_path / "data.lbld"
    write_dataset(str(path), triplets)
    raw = path.read_bytes()

    bad_magic = tmp_path / "magic.lbld"
    bad_magic.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(DatasetLoadError):
        read_dataset(str(bad_magic))

    truncated = tmp_path / "short.lbld"
    truncated.write_bytes(raw[:-10])
    with pytest.raises(DatasetLoadError):
        read_dataset(str(truncated))

    tiny = tmp_path / "tiny.lbld"
    tiny.write_bytes(raw[: HEADER.itemsize - 1])
    with pytest.raises(DatasetLoadError):
        read_header(str(tiny))

    with pytest.raises(DatasetLoadError):
        read_dataset(str(tmp_path / "missing.lbld"))


def test_corrupt_pixels_are_reported(tmp_path, triplets):
    path = tmp_path / "data.lbld"
    write_dataset(str(path), triplets)
    raw = bytearray(path.read_bytes())
    raw[HEADER.itemsize:HEADER.itemsize + 4] = np.float32(7.0).tobytes()
    path.write_bytes(bytes(raw))
    with pytest.raises(DatasetLoadError):
        read_dataset(str(path))


def test_write_pnm(tmp_path):
    gray = Image(3, 2, 1, [0.0, 0.5, 1.0, 0.25, 0.75, 1.0])
    path = tmp_path / "images" / "gray.pgm"
    write_pnm(str(path), gray)
    raw = path.read_bytes()
    assert raw.startswith(b"P5\n3 2\n255\n")
    assert list(raw[-6:]) == [0, 128, 255, 64, 191, 255]

    rgb = Image(1, 1, 3, [1.0, 0.0, 0.0])
    write_pnm(str(tmp_path / "rgb.ppm"), rgb)
    assert (tmp_path / "rgb.ppm").read_bytes() == b"P6\n1 1\n255\n\xff\x00\x00"

    with pytest.raises(ShapeError):
        write_pnm(str(tmp_path / "two.pnm"), Image(1, 1, 2, [0.0, 1.0]))
