"""
Value types shared by every stage of the pipeline.

Images are float arrays shaped (H, W, C) with values in [0, 1], masks are
boolean arrays shaped (H, W) and latents are float arrays shaped (h, w, c).
Plain numpy arrays are used for those three so that the geometry code can
slice and blend them directly; the helpers below enforce their contracts.
"""
import attr
import numpy as np

from errors import DimensionMismatchError, NonFiniteValueError


def as_image(image):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[:, :, None]
    if image.ndim != 3 or image.shape[0] < 1 or image.shape[1] < 1:
        raise DimensionMismatchError(
            "Expected an H x W x C image, got shape {}".format(image.shape)
        )
    return image


def as_mask(mask):
    mask = np.asarray(mask)
    if mask.ndim == 3 and mask.shape[2] == 1:
        mask = mask[:, :, 0]
    if mask.ndim != 2:
        raise DimensionMismatchError(
            "Expected an H x W mask, got shape {}".format(mask.shape)
        )
    if mask.dtype != bool:
        mask = mask >= 0.5
    return mask


def as_latent(latent):
    latent = np.asarray(latent, dtype=np.float64)
    if latent.ndim != 3 or latent.shape[0] < 1 or latent.shape[1] < 1:
        raise DimensionMismatchError(
            "Expected an h x w x c latent, got shape {}".format(latent.shape)
        )
    if not np.all(np.isfinite(latent)):
        raise NonFiniteValueError("Latent contains non-finite values")
    return latent


def _as_matrix(value):
    value = np.atleast_2d(np.asarray(value, dtype=np.float64))
    if value.ndim != 2 or value.shape[0] < 1 or value.shape[1] < 1:
        raise DimensionMismatchError(
            "Token matrix must be L x d with L, d >= 1, got {}".format(
                value.shape
            )
        )
    if not np.all(np.isfinite(value)):
        raise NonFiniteValueError("Token matrix contains non-finite values")
    return value


@attr.s(frozen=True, eq=False)
class TextEmbedding:
    """
    Token sequence produced by a text encoder.

    `pooled` is the mean of the token rows unless the encoder supplies its own
    pooled output, in which case `encoder_pooled` is set.
    """

    tokens = attr.ib(converter=_as_matrix)
    pooled = attr.ib(default=None)
    encoder_pooled = attr.ib(default=False)

    def __attrs_post_init__(self):
        if self.pooled is None:
            object.__setattr__(self, "pooled", self.tokens.mean(axis=0))
            object.__setattr__(self, "encoder_pooled", False)
        else:
            pooled = np.asarray(self.pooled, dtype=np.float64).reshape(-1)
            if pooled.shape[0] != self.dim:
                raise DimensionMismatchError(
                    "Pooled vector has dim {}, tokens have dim {}".format(
                        pooled.shape[0], self.dim
                    )
                )
            object.__setattr__(self, "pooled", pooled)

    @property
    def length(self):
        return self.tokens.shape[0]

    @property
    def dim(self):
        return self.tokens.shape[1]


@attr.s(frozen=True)
class Conditioning:
    embedding = attr.ib(validator=attr.validators.instance_of(TextEmbedding))
    guidance_scale = attr.ib(default=1.0, converter=float)

    @guidance_scale.validator
    def _check_guidance(self, attribute, value):
        if value < 0:
            raise ValueError(
                "guidance_scale must be nonnegative, got {}".format(value)
            )
