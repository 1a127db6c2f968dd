import abc

import numpy as np

from errors import ZeroNormError

IMAGE = "image"
TEXT = "text"
BOTH = "both"


def normalize(vector):
    vector = np.asarray(vector, dtype=np.float64).reshape(-1)
    norm = np.linalg.norm(vector)
    if norm == 0 or not np.isfinite(norm):
        raise ZeroNormError("Cannot normalize a vector of norm {}".format(norm))
    return vector / norm


class EmbedderHandle(abc.ABC):
    """
    Maps images and/or text to unit-norm vectors of a shared dimension.
    """

    name = "embedder"
    modality = BOTH
    dim = 1

    @property
    def embeds_images(self):
        return self.modality in (IMAGE, BOTH)

    @property
    def embeds_text(self):
        return self.modality in (TEXT, BOTH)

    def embed_image(self, image):
        raise NotImplementedError(
            "{} does not embed images".format(self.name)
        )

    def embed_text(self, text):
        raise NotImplementedError("{} does not embed text".format(self.name))
