"""
Deterministic embedders for runs without model weights.
"""
import hashlib
import re

import numpy as np
from PIL import Image

from backbones.types import as_image
from embedders.base import BOTH, IMAGE, EmbedderHandle, normalize
from utils import image_io

GRID = 8
TEXT_BUCKETS = 256


def _token_bucket(token):
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little") % TEXT_BUCKETS


class MockImageEmbedder(EmbedderHandle):
    """
    Seeded random projection of an 8x8 box-downsampled copy of the image.
    """

    modality = IMAGE

    def __init__(self, name="mock-image", dim=64, seed=0):
        self.name = name
        self.dim = dim
        rng = np.random.default_rng(seed)
        self.image_projection = rng.standard_normal((GRID * GRID * 3, dim))

    def embed_image(self, image):
        image = as_image(image)
        if image.shape[2] == 1:
            image = np.repeat(image, 3, axis=2)
        small = image_io.resize_image(image[:, :, :3], GRID, GRID, Image.BOX)
        # The offset keeps a flat mid-gray image embeddable.
        return normalize((small.reshape(-1) - 0.5) @ self.image_projection + 1e-3)


class MockClipEmbedder(MockImageEmbedder):
    """
    Image side as MockImageEmbedder; text side projects hashed token counts
    into the same space.
    """

    modality = BOTH

    def __init__(self, name="mock-clip", dim=64, seed=1):
        super().__init__(name=name, dim=dim, seed=seed)
        rng = np.random.default_rng([seed, 1])
        self.text_projection = rng.standard_normal((TEXT_BUCKETS, dim))

    def embed_text(self, text):
        counts = np.zeros(TEXT_BUCKETS)
        for token in re.findall(r"[\w'-]+", text.lower()):
            counts[_token_bucket(token)] += 1.0
        return normalize(counts @ self.text_projection)


def mock_dino(dim=64, seed=2):
    return MockImageEmbedder(name="mock-dino", dim=dim, seed=seed)
