"""Image file I/O: PNG plus binary PPM/PGM (P6/P5).

Loaded images are channel-last float32 arrays clamped to [0, 1];
grayscale files come back as (h, w, 1). PNG goes through Pillow; the
netpbm formats are parsed directly so 16-bit depth maps round-trip
predictably (values are scaled by the declared maxval).
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np


class ImageIOError(ValueError):
    """Unreadable or unsupported image file; carries path and reason."""

    def __init__(self, path, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = str(path)
        self.reason = reason


@dataclass
class ImageBuffer:
    """Decoded image: (h, w, c) float32 in [0, 1] plus its source path."""

    data: np.ndarray
    path: str | None = None

    @property
    def h(self) -> int:
        return self.data.shape[0]

    @property
    def w(self) -> int:
        return self.data.shape[1]

    @property
    def c(self) -> int:
        return self.data.shape[2]


def _read_pnm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    m = re.match(rb"(P[56])\s+(?:#[^\n]*\s+)*(\d+)\s+(?:#[^\n]*\s+)*(\d+)\s+"
                 rb"(?:#[^\n]*\s+)*(\d+)[ \t]*(?:\r\n|\r|\n)", blob)
    if not m:
        raise ImageIOError(path, "malformed PPM/PGM header")
    magic, w, h, maxval = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
    if maxval < 1 or maxval > 65535:
        raise ImageIOError(path, f"unsupported maxval {maxval}")
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    count = w * h * channels
    raw = blob[m.end():]
    if len(raw) < count * dtype.itemsize:
        raise ImageIOError(path, "truncated pixel data")
    pixels = np.frombuffer(raw, dtype=dtype, count=count).reshape(h, w, channels)
    return pixels.astype(np.float32) / float(maxval)


def _write_pnm(path, arr_u8: np.ndarray):
    magic = b"P6" if arr_u8.shape[2] == 3 else b"P5"
    header = magic + b"\n%d %d\n255\n" % (arr_u8.shape[1], arr_u8.shape[0])
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr_u8.tobytes())


def load_image(path) -> ImageBuffer:
    """Decode a PNG/PPM/PGM file to float32 in [0, 1]."""
    text = str(path)
    lower = text.lower()
    try:
        if lower.endswith((".ppm", ".pgm", ".pnm")):
            data = _read_pnm(path)
        else:
            from PIL import Image

            with Image.open(path) as img:
                if img.mode in ("I", "I;16", "I;16B"):
                    arr = np.asarray(img, dtype=np.float32) / 65535.0
                elif img.mode in ("L", "RGB"):
                    arr = np.asarray(img, dtype=np.float32) / 255.0
                else:
                    arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
            data = arr[:, :, None] if arr.ndim == 2 else arr
    except ImageIOError:
        raise
    except Exception as exc:
        raise ImageIOError(path, f"cannot decode: {exc}") from exc
    if data.ndim != 3 or data.shape[2] not in (1, 3):
        raise ImageIOError(path, f"unsupported channel layout {data.shape}")
    return ImageBuffer(data=np.clip(data, 0.0, 1.0), path=text)


def save_image(image, path):
    """Write an image (8-bit) as PNG or binary PPM/PGM, chosen by extension."""
    data = image.data if isinstance(image, ImageBuffer) else np.asarray(image)
    if data.ndim == 2:
        data = data[:, :, None]
    if data.ndim != 3 or data.shape[2] not in (1, 3):
        raise ImageIOError(path, f"cannot encode layout {data.shape}")
    quant = np.clip(np.rint(np.clip(data, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)
    lower = str(path).lower()
    if lower.endswith((".ppm", ".pgm", ".pnm")):
        _write_pnm(path, quant)
    elif lower.endswith(".png"):
        from PIL import Image

        mode = "RGB" if quant.shape[2] == 3 else "L"
        Image.fromarray(quant.squeeze(-1) if mode == "L" else quant, mode).save(path)
    else:
        raise ImageIOError(path, "unsupported extension (use .png/.ppm/.pgm)")
