import os

import numpy as np
from PIL import Image

from backbones.types import as_image, as_mask

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".webp")


def read_image(path, size=None):
    with Image.open(path) as img:
        img = img.convert("RGB")
        if size is not None:
            img = img.resize((size, size), Image.BICUBIC)
        return np.asarray(img, dtype=np.float64) / 255.0


def write_image(path, image):
    pixels = np.clip(np.round(as_image(image) * 255.0), 0, 255).astype(np.uint8)
    if pixels.shape[2] == 1:
        pixels = pixels[:, :, 0]
    Image.fromarray(pixels).save(path, format="PNG")


def read_mask(path, size=None):
    """
    Single-channel PNG, 0 for background and 255 for the region.
    """
    with Image.open(path) as img:
        img = img.convert("L")
        if size is not None:
            img = img.resize((size, size), Image.NEAREST)
        return np.asarray(img) >= 128


def write_mask(path, mask):
    pixels = as_mask(mask).astype(np.uint8) * 255
    Image.fromarray(pixels).save(path, format="PNG")


def image_size(path):
    with Image.open(path) as img:
        return img.size


def resize_image(image, height, width, resample=Image.BILINEAR):
    """
    Per-channel float resize; returns a copy when the size already matches.
    """
    image = as_image(image)
    if image.shape[0] == height and image.shape[1] == width:
        return image.copy()
    channels = [
        np.asarray(
            Image.fromarray(image[:, :, c].astype(np.float32)).resize(
                (width, height), resample
            ),
            dtype=np.float64,
        )
        for c in range(image.shape[2])
    ]
    return np.stack(channels, axis=2)


def resize_mask(mask, height, width):
    """
    Nearest-neighbour resize thresholded at 0.5, so the result stays binary.
    """
    mask = as_mask(mask)
    if mask.shape == (height, width):
        return mask.copy()
    resized = Image.fromarray(mask.astype(np.float32)).resize(
        (width, height), Image.NEAREST
    )
    return np.asarray(resized) >= 0.5


def list_images(directory):
    return sorted(
        os.path.join(directory, name)
        for name in os.listdir(directory)
        if name.lower().endswith(IMAGE_SUFFIXES)
    )
