"""Reading and writing image grids as plain-text CSV and 8-bit PGM/PPM.

CSV layout: a single header comment ``# side=<N> channels=<c>`` followed by
one line per pixel row with channels interleaved
(``u[i,0,0], u[i,0,1], ..., u[i,1,0], ...``).  Values round-trip exactly
(written with ``repr``).

PGM (P5) holds single-channel images, PPM (P6) three-channel ones, both
with maxval 255; intensities are clipped to [0, 1] and quantized.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import InvalidInputError
from .grid import ImageGrid


def write_image_csv(img: ImageGrid, path: str | os.PathLike) -> None:
    n, c = img.side, img.channels
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"# side={n} channels={c}\n")
        for i in range(n):
            row = img.pixels[i].reshape(-1)
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_image_csv(path: str | os.PathLike) -> ImageGrid:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise InvalidInputError(f"{path}: missing '# side=.. channels=..' header")
        fields = dict(part.split("=") for part in header[1:].split())
        n, c = int(fields["side"]), int(fields["channels"])
        rows = []
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(v) for v in line.split(",")])
    data = np.asarray(rows, dtype=float)
    if data.shape != (n, n * c):
        raise InvalidInputError(f"{path}: expected {n}x{n * c} values, got {data.shape}")
    return ImageGrid(data.reshape(n, n, c))


def write_image_pnm(img: ImageGrid, path: str | os.PathLike) -> None:
    """Write a binary PGM (1 channel) or PPM (3 channels)."""
    magic = b"P5" if img.channels == 1 else b"P6"
    quantized = np.clip(np.rint(img.pixels * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (img.side, img.side))
        fh.write(quantized.tobytes())


def read_image_pnm(path: str | os.PathLike) -> ImageGrid:
    with open(path, "rb") as fh:
        blob = fh.read()
    # header: magic, width, height, maxval, single whitespace, then raster
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":  # comment line
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos])
    pos += 1  # single whitespace after maxval
    magic, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic not in (b"P5", b"P6"):
        raise InvalidInputError(f"{path}: unsupported magic {magic!r}")
    if maxval != 255:
        raise InvalidInputError(f"{path}: only maxval 255 supported, got {maxval}")
    channels = 1 if magic == b"P5" else 3
    raster = np.frombuffer(blob, dtype=np.uint8, count=width * height * channels, offset=pos)
    pixels = raster.reshape(height, width, channels).astype(float) / 255.0
    return ImageGrid(pixels)


def write_image(img: ImageGrid, path: str | os.PathLike) -> None:
    """Dispatch on extension: .csv, .pgm (1ch), .ppm (3ch)."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".csv":
        write_image_csv(img, path)
    elif ext == ".pgm":
        if img.channels != 1:
            raise InvalidInputError("PGM holds single-channel images; use .ppm")
        write_image_pnm(img, path)
    elif ext == ".ppm":
        if img.channels != 3:
            raise InvalidInputError("PPM holds three-channel images; use .pgm")
        write_image_pnm(img, path)
    else:
        raise InvalidInputError(f"unsupported image extension {ext!r}")


def read_image(path: str | os.PathLike) -> ImageGrid:
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".csv":
        return read_image_csv(path)
    if ext in (".pgm", ".ppm"):
        return read_image_pnm(path)
    raise InvalidInputError(f"unsupported image extension {ext!r}")
