"""
CLIP and DINO embedders backed by transformers. Weights are fetched by
transformers on first use; nothing ships with this repo.
"""
import logging

import numpy as np

from backbones.types import as_image
from embedders.base import BOTH, IMAGE, EmbedderHandle, normalize
from errors import BackboneUnavailableError

LOG = logging.getLogger(__name__)


def _import_transformers():
    try:
        import torch
        import transformers
    except ImportError as e:
        raise BackboneUnavailableError(
            "transformers is required for model embedders: {}".format(e)
        )
    return torch, transformers


def _to_pil(image):
    from PIL import Image

    pixels = np.clip(np.round(as_image(image)[:, :, :3] * 255.0), 0, 255)
    return Image.fromarray(pixels.astype(np.uint8))


class ClipEmbedder(EmbedderHandle):
    modality = BOTH

    def __init__(self, model_id="openai/clip-vit-base-patch32", device="cpu"):
        self.torch, transformers = _import_transformers()
        LOG.info("Loading CLIP model {}".format(model_id))
        self.name = "clip:{}".format(model_id)
        self.device = device
        self.processor = transformers.CLIPProcessor.from_pretrained(model_id)
        self.model = transformers.CLIPModel.from_pretrained(model_id).to(device)
        self.model.eval()
        self.dim = self.model.config.projection_dim

    def embed_image(self, image):
        inputs = self.processor(images=_to_pil(image), return_tensors="pt").to(
            self.device
        )
        with self.torch.no_grad():
            features = self.model.get_image_features(**inputs)
        return normalize(features[0].cpu().numpy())

    def embed_text(self, text):
        inputs = self.processor(
            text=[text], return_tensors="pt", padding=True, truncation=True
        ).to(self.device)
        with self.torch.no_grad():
            features = self.model.get_text_features(**inputs)
        return normalize(features[0].cpu().numpy())


class DinoEmbedder(EmbedderHandle):
    modality = IMAGE

    def __init__(self, model_id="facebook/dino-vits16", device="cpu"):
        self.torch, transformers = _import_transformers()
        LOG.info("Loading DINO model {}".format(model_id))
        self.name = "dino:{}".format(model_id)
        self.device = device
        self.processor = transformers.AutoImageProcessor.from_pretrained(model_id)
        self.model = transformers.AutoModel.from_pretrained(model_id).to(device)
        self.model.eval()
        self.dim = self.model.config.hidden_size

    def embed_image(self, image):
        inputs = self.processor(images=_to_pil(image), return_tensors="pt").to(
            self.device
        )
        with self.torch.no_grad():
            outputs = self.model(**inputs)
        # CLS token of the last layer.
        return normalize(outputs.last_hidden_state[0, 0].cpu().numpy())
