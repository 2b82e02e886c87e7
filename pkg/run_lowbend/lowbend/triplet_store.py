"""Read and write LBLD triplet datasets and PNM image files."""
# Use of this source code is governed by a MIT-style
# license that can be found in the LICENSE file.

import logging
import os
from typing import List, Sequence

import numpy as np

from .exceptions import DatasetLoadError, ParameterError, ShapeError
from .imaging import Image, Triplet

log = logging.getLogger(__name__)

MAGIC = b"LBLD"
VERSION = 1
HEADER = np.dtype(
    [
        ("magic", "S4"),
        ("version", "<u4"),
        ("count", "<u4"),
        ("width", "<u4"),
        ("height", "<u4"),
        ("channels", "<u4"),
    ]
)


def record_dtype(width: int, height: int, channels: int) -> np.dtype:
    n = width * height * channels
    return np.dtype([("x", "<f4", (n,)), ("y", "<f4", (n,)), ("av", "<f4", (n,)), ("dist", "<f8")])


def write_dataset(path: str, triplets: Sequence[Triplet]) -> None:
    if not triplets:
        raise ShapeError("Refusing to write an empty dataset")
    width, height, channels = triplets[0].img_x.shape
    header = np.zeros(1, dtype=HEADER)
    header[0] = (MAGIC, VERSION, len(triplets), width, height, channels)
    records = np.zeros(len(triplets), dtype=record_dtype(width, height, channels))
    for i, t in enumerate(triplets):
        if t.img_x.shape != (width, height, channels):
            raise ShapeError(f"Triplet {i} has shape {t.img_x.shape}")
        records[i] = (t.img_x.vector(), t.img_y.vector(), t.img_av.vector(), t.dist)
    with open(path, "wb") as f:
        f.write(header.tobytes())
        f.write(records.tobytes())
    log.info(f"Wrote {len(triplets)} triplets to {path}")


def read_header(path: str) -> np.void:
    try:
        with open(path, "rb") as f:
            raw = f.read(HEADER.itemsize)
    except OSError as e:
        raise DatasetLoadError(f"Cannot read {path}: {e}") from e
    if len(raw) < HEADER.itemsize:
        raise DatasetLoadError(f"{path} is too short for an LBLD header")
    header = np.frombuffer(raw, dtype=HEADER)[0]
    if header["magic"] != MAGIC:
        raise DatasetLoadError(f"{path} is not an LBLD file")
    if header["version"] != VERSION:
        raise DatasetLoadError(f"Unsupported LBLD version {header['version']} in {path}")
    return header


def read_dataset(path: str) -> List[Triplet]:
    header = read_header(path)
    width, height, channels = (int(header[k]) for k in ("width", "height", "channels"))
    dtype = record_dtype(width, height, channels)
    with open(path, "rb") as f:
        f.seek(HEADER.itemsize)
        body = f.read()
    count = int(header["count"])
    if len(body) != count * dtype.itemsize:
        raise DatasetLoadError(
            f"{path} announces {count} records but holds {len(body)} bytes of data"
        )
    records = np.frombuffer(body, dtype=dtype)
    triplets = []
    try:
        for r in records:
            imgs = [
                Image(width, height, channels, r[key].astype(np.float64))
                for key in ("x", "y", "av")
            ]
            triplets.append(Triplet(*imgs, float(r["dist"])))
    except (ShapeError, ParameterError, ValueError) as e:
        raise DatasetLoadError(f"Corrupt record in {path}: {e}") from e
    log.info(f"Read {count} triplets from {path}")
    return triplets


def write_pnm(path: str, img: Image) -> None:
    """Binary PGM (P5) for one channel, PPM (P6) for three."""
    if img.channels == 1:
        magic = b"P5"
    elif img.channels == 3:
        magic = b"P6"
    else:
        raise ShapeError(f"PNM supports 1 or 3 channels, got {img.channels}")
    data = np.round(img.pixels * 255.0).astype(np.uint8)
    dirname = os.path.dirname(path)
    if dirname:
        os.makedirs(dirname, exist_ok=True)
    with open(path, "wb") as f:
        f.write(magic + f"\n{img.width} {img.height}\n255\n".encode("ascii"))
        f.write(data.tobytes())
