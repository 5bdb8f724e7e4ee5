"""Image locators, pixel access and content digests.

An image locator is a plain string: a file path, optionally followed by
``#crop=x,y,w,h`` to address a pixel sub-rectangle. Backends never see
anything else, which keeps the cache keys and stub seeds content-derived.
"""

from __future__ import annotations

import hashlib
import math
import os
from functools import lru_cache

from PIL import Image

from .core import Box
from .errors import InputError

_CROP_TAG = "#crop="


def parse_ref(image_ref: str) -> tuple[str, tuple[int, int, int, int] | None]:
    path, sep, spec = image_ref.partition(_CROP_TAG)
    if not sep:
        return image_ref, None
    try:
        x, y, w, h = (int(v) for v in spec.split(","))
    except ValueError as exc:
        raise InputError(f"bad crop spec in image locator {image_ref!r}") from exc
    return path, (x, y, w, h)


def _stat_key(path: str) -> tuple[int, int]:
    try:
        st = os.stat(path)
    except OSError as exc:
        raise InputError(f"unreadable image {path!r}: {exc}") from exc
    return st.st_mtime_ns, st.st_size


@lru_cache(maxsize=256)
def _load(path: str, crop: tuple[int, int, int, int] | None, stamp: tuple[int, int]) -> Image.Image:
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
    except Exception as exc:
        raise InputError(f"unreadable image {path!r}: {exc}") from exc
    if crop is not None:
        x, y, w, h = crop
        im = im.crop((x, y, x + w, y + h))
    return im


def load_image(image_ref: str) -> Image.Image:
    """Decode the locator into an RGB image. Callers must not mutate the result."""
    path, crop = parse_ref(image_ref)
    return _load(path, crop, _stat_key(path))


def image_size(image_ref: str) -> tuple[int, int]:
    return load_image(image_ref).size


@lru_cache(maxsize=1024)
def _digest(path: str, crop, stamp) -> str:
    im = _load(path, crop, stamp)
    h = hashlib.sha256()
    h.update(f"{im.mode}:{im.size[0]}x{im.size[1]}:".encode())
    h.update(im.tobytes())
    return h.hexdigest()


def content_digest(image_ref: str) -> str:
    """SHA-256 of the decoded pixels, so identical crops of different files agree."""
    path, crop = parse_ref(image_ref)
    return _digest(path, crop, _stat_key(path))


def pixel_box(box: Box, width: int, height: int) -> tuple[int, int, int, int]:
    """Round a float ``(x, y, w, h)`` outward to whole pixels and clamp it to the image."""
    x, y, w, h = box
    x0 = max(0, math.floor(x))
    y0 = max(0, math.floor(y))
    x1 = min(width, math.ceil(x + w))
    y1 = min(height, math.ceil(y + h))
    if x1 <= x0 or y1 <= y0:
        raise InputError(f"box {tuple(box)} does not intersect a {width}x{height} image")
    return x0, y0, x1 - x0, y1 - y0


def crop_region(image_ref: str, box: Box) -> str:
    """Locator for ``box`` cut out of ``image_ref``, clamped to the image bounds.

    Boxes are relative to the image the locator addresses, so cropping an
    already-cropped locator composes the offsets.
    """
    path, outer = parse_ref(image_ref)
    width, height = image_size(image_ref)
    x, y, w, h = pixel_box(box, width, height)
    if outer is not None:
        x, y = x + outer[0], y + outer[1]
    if outer is None and (x, y, w, h) == (0, 0, width, height):
        return path
    return f"{path}{_CROP_TAG}{x},{y},{w},{h}"
