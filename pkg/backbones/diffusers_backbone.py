"""
Adapter for diffusers inpainting pipelines. No weights ship with this repo;
the model id is resolved by diffusers (local path or hub id) at load time.
"""
import logging

import numpy as np

from backbones.base import Backbone
from backbones.schedule import SamplerSchedule
from backbones.types import TextEmbedding, as_image
from errors import BackboneUnavailableError, DimensionMismatchError

LOG = logging.getLogger(__name__)


class DiffusersInpaintBackbone(Backbone):
    downscale = 8
    latent_channels = 4

    def __init__(self, model_id, schedule=None, device="cpu"):
        try:
            import torch
            from diffusers import StableDiffusionInpaintPipeline
        except ImportError as e:
            raise BackboneUnavailableError(
                "diffusers is required for backbone {}: {}".format(model_id, e)
            )
        schedule = schedule or SamplerSchedule.linear()
        self.torch = torch
        self.device = device
        LOG.info("Loading inpainting pipeline {}".format(model_id))
        self.pipe = StableDiffusionInpaintPipeline.from_pretrained(model_id).to(
            device
        )
        self.name = "diffusers:{}".format(model_id)
        self.working_resolution = self.pipe.unet.config.sample_size * 8
        self.scaling = self.pipe.vae.config.scaling_factor
        self.timesteps = self._timesteps(schedule.T)
        alphas_cumprod = self.pipe.scheduler.alphas_cumprod.numpy()
        acp = np.concatenate([[1.0], alphas_cumprod[self.timesteps[1:]]])
        super().__init__(
            SamplerSchedule(
                T=schedule.T,
                lambda_split=schedule.lambda_split,
                alpha=np.sqrt(acp),
                delta=np.sqrt(1.0 - acp),
            )
        )
        self.inpaint_context = None

    def _timesteps(self, T):
        train_steps = self.pipe.scheduler.config.num_train_timesteps
        return np.round(np.linspace(0, train_steps - 1, T + 1)).astype(int)

    def _tensor(self, array):
        return self.torch.as_tensor(
            np.ascontiguousarray(array), dtype=self.torch.float32
        ).to(self.device)

    def encode(self, image):
        image = as_image(image)
        if image.shape[0] % 8 or image.shape[1] % 8:
            raise DimensionMismatchError(
                "Image {} is not divisible by 8".format(image.shape[:2])
            )
        pixels = self._tensor(image.transpose(2, 0, 1)[None] * 2.0 - 1.0)
        with self.torch.no_grad():
            latent = self.pipe.vae.encode(pixels).latent_dist.mean * self.scaling
        return latent[0].permute(1, 2, 0).cpu().numpy().astype(np.float64)

    def decode(self, latent):
        latent = np.asarray(latent, dtype=np.float64)
        if latent.ndim != 3 or latent.shape[2] != self.latent_channels:
            raise DimensionMismatchError(
                "Expected a latent with 4 channels, got {}".format(latent.shape)
            )
        with self.torch.no_grad():
            pixels = self.pipe.vae.decode(
                self._tensor(latent.transpose(2, 0, 1)[None]) / self.scaling
            ).sample
        image = (pixels[0].permute(1, 2, 0).cpu().numpy() + 1.0) / 2.0
        return np.clip(image.astype(np.float64), 0.0, 1.0)

    def encode_text(self, prompt):
        tokenizer = self.pipe.tokenizer
        ids = tokenizer(
            prompt,
            padding="max_length",
            max_length=tokenizer.model_max_length,
            truncation=True,
            return_tensors="pt",
        ).input_ids.to(self.device)
        with self.torch.no_grad():
            hidden = self.pipe.text_encoder(ids)[0][0]
        return TextEmbedding(tokens=hidden.cpu().numpy().astype(np.float64))

    def set_inpaint_context(self, mask, masked_image):
        """
        9-channel inpainting UNets also consume the downsampled mask and the
        latent of the masked image; callers set them per crop.
        """
        mask_latent = mask[:: self.downscale, :: self.downscale, None]
        self.inpaint_context = (
            mask_latent.astype(np.float64),
            self.encode(masked_image),
        )

    def _unet_eps(self, z, tokens, t):
        sample = z
        if self.pipe.unet.config.in_channels == 9:
            if self.inpaint_context is None:
                raise BackboneUnavailableError(
                    "Inpainting UNet needs set_inpaint_context first"
                )
            mask_latent, masked_latent = self.inpaint_context
            sample = np.concatenate([z, mask_latent, masked_latent], axis=2)
        with self.torch.no_grad():
            eps = self.pipe.unet(
                self._tensor(sample.transpose(2, 0, 1)[None]),
                int(self.timesteps[t]),
                encoder_hidden_states=self._tensor(tokens[None]),
            ).sample
        return eps[0].permute(1, 2, 0).cpu().numpy().astype(np.float64)

    def predict_noise(self, z, cond, t):
        g = cond.guidance_scale
        eps_cond = self._unet_eps(z, cond.embedding.tokens, t)
        if g == 1.0:
            return eps_cond
        eps_uncond = self._unet_eps(z, self.encode_text("").tokens, t)
        return eps_uncond + g * (eps_cond - eps_uncond)
