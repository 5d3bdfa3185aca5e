"""EESD labeled-image dataset file format.

Little-endian layout: magic "EESD" | version u32 = 1 | image count u32 |
K u32 | H u32 | W u32 | per image: RGB u8 * 3*H*W (channel-major) followed
by labels u8 * H*W. Label 255 marks ignored pixels; all other labels must
be < K. Images decode to float32 tensors in [0, 1] (value / 255).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterator

import numpy as np

from .errors import DataFormatError
from .tensor import Tensor

MAGIC = b"EESD"
VERSION = 1
IGNORE_LABEL = 255


@dataclass(frozen=True)
class DatasetHeader:
    num_images: int
    num_classes: int
    height: int
    width: int


def write_eesd(path: str, images: np.ndarray, labels: np.ndarray, num_classes: int) -> None:
    """Write uint8 images (n, 3, H, W) and labels (n, H, W) to an EESD file."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images.ndim != 4 or images.shape[1] != 3:
        raise DataFormatError(f"images must be (n, 3, H, W), got {images.shape}")
    n, _, h, w = images.shape
    if labels.shape != (n, h, w):
        raise DataFormatError(f"labels must be {(n, h, w)}, got {labels.shape}")
    bad = labels[(labels != IGNORE_LABEL) & (labels >= num_classes)]
    if bad.size:
        raise DataFormatError(f"labels exceed num_classes {num_classes}")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IIIII", VERSION, n, num_classes, h, w))
        for i in range(n):
            f.write(images[i].tobytes())
            f.write(labels[i].tobytes())


def _read_header(f: BinaryIO) -> DatasetHeader:
    head = f.read(4 + 20)
    if len(head) != 24 or head[:4] != MAGIC:
        raise DataFormatError("bad magic; not an EESD dataset file")
    version, n, k, h, w = struct.unpack("<IIIII", head[4:])
    if version != VERSION:
        raise DataFormatError(f"unknown EESD version {version}")
    if n == 0 or k == 0 or h == 0 or w == 0:
        raise DataFormatError("degenerate dataset dimensions")
    return DatasetHeader(n, k, h, w)


def read_header(path: str) -> DatasetHeader:
    with open(path, "rb") as f:
        return _read_header(f)


def iter_eesd(path: str) -> Iterator[tuple[Tensor, np.ndarray]]:
    """Stream (image tensor in [0, 1], int64 label map) pairs from a file."""
    with open(path, "rb") as f:
        header = _read_header(f)
        img_bytes = 3 * header.height * header.width
        lab_bytes = header.height * header.width
        for i in range(header.num_images):
            raw = f.read(img_bytes + lab_bytes)
            if len(raw) != img_bytes + lab_bytes:
                raise DataFormatError(f"truncated dataset at image {i}")
            img = np.frombuffer(raw[:img_bytes], dtype=np.uint8).reshape(
                3, header.height, header.width
            )
            lab = np.frombuffer(raw[img_bytes:], dtype=np.uint8).reshape(
                header.height, header.width
            )
            bad = lab[(lab != IGNORE_LABEL) & (lab >= header.num_classes)]
            if bad.size:
                raise DataFormatError(f"image {i} labels exceed K={header.num_classes}")
            yield decode_image(img), lab.astype(np.int64)
        if f.read(1):
            raise DataFormatError("trailing bytes after last image")


def read_eesd(path: str) -> tuple[DatasetHeader, list[tuple[Tensor, np.ndarray]]]:
    header = read_header(path)
    return header, list(iter_eesd(path))


def decode_image(raw: np.ndarray) -> Tensor:
    """uint8 (3, H, W) to float32 in [0, 1]."""
    return Tensor(raw.astype(np.float32) / np.float32(255.0))
