"""
Deterministic toy backbone for desk-scale runs and tests.
"""
import hashlib
import logging
import re

import numpy as np
import torch

from backbones.base import Backbone
from backbones.denoiser import ToyDenoiser
from backbones.schedule import SamplerSchedule
from backbones.types import TextEmbedding, as_image, as_latent
from errors import BackboneUnavailableError, DimensionMismatchError

LOG = logging.getLogger(__name__)

TOKEN_PATTERN = re.compile(r"[\w\[\]'-]+")
NULL_TOKEN = "<null>"


class ToyCodec:
    """
    Identity codec for factor 1. For larger factors the encoder average-pools
    factor x factor blocks and mixes the 3 colour channels into 4 latent
    channels; the decoder inverts the mix and upsamples by repetition.
    """

    MIX = np.array(
        [[1.0, 0.0, 0.0, 0.5], [0.0, 1.0, 0.0, 0.5], [0.0, 0.0, 1.0, 0.5]]
    )

    def __init__(self, factor=1, image_channels=3):
        self.factor = int(factor)
        self.image_channels = image_channels
        self.latent_channels = image_channels if self.factor == 1 else 4
        self._unmix = np.linalg.pinv(self.MIX)

    def encode(self, image):
        image = as_image(image)
        height, width, channels = image.shape
        if height % self.factor or width % self.factor:
            raise DimensionMismatchError(
                "Image {}x{} is not divisible by codec factor {}".format(
                    height, width, self.factor
                )
            )
        if channels != self.image_channels:
            raise DimensionMismatchError(
                "Expected {} image channels, got {}".format(
                    self.image_channels, channels
                )
            )
        if self.factor == 1:
            return image.copy()
        f = self.factor
        pooled = image.reshape(height // f, f, width // f, f, channels).mean(
            axis=(1, 3)
        )
        return pooled @ self.MIX

    def decode(self, latent):
        latent = np.asarray(latent, dtype=np.float64)
        if latent.ndim != 3 or latent.shape[2] != self.latent_channels:
            raise DimensionMismatchError(
                "Expected a latent with {} channels, got shape {}".format(
                    self.latent_channels, latent.shape
                )
            )
        if self.factor == 1:
            return np.clip(latent, 0.0, 1.0)
        pixels = latent @ self._unmix
        pixels = np.repeat(np.repeat(pixels, self.factor, 0), self.factor, 1)
        return np.clip(pixels, 0.0, 1.0)


class ToyTextEncoder:
    """
    Lowercased word tokens, each mapped to a Gaussian vector seeded by the
    word's hash. The empty prompt encodes to the single null token.
    """

    def __init__(self, dim=32):
        self.dim = dim
        self._cache = {}

    def tokenize(self, prompt):
        return TOKEN_PATTERN.findall(prompt.lower()) or [NULL_TOKEN]

    def token_vector(self, token):
        if token not in self._cache:
            digest = hashlib.sha256(token.encode("utf-8")).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            self._cache[token] = rng.standard_normal(self.dim)
        return self._cache[token]

    def encode(self, prompt):
        tokens = self.tokenize(prompt)
        return TextEmbedding(
            tokens=np.stack([self.token_vector(t) for t in tokens])
        )


class OracleNoisePredictor:
    """
    Returns a fixed noise array regardless of its inputs; inverts
    forward_noise exactly when given the noise that produced the latent.
    """

    def __init__(self, noise):
        self.noise = np.asarray(noise, dtype=np.float64)

    def __call__(self, z, tokens, t, schedule):
        return self.noise


class DenoiserPredictor:
    def __init__(self, denoiser):
        self.denoiser = denoiser

    def __call__(self, z, tokens, t, schedule):
        with torch.no_grad():
            eps = self.denoiser(
                torch.as_tensor(z, dtype=torch.float32)[None],
                torch.as_tensor(tokens, dtype=torch.float32)[None],
                torch.tensor([schedule.alpha[t]], dtype=torch.float32),
                torch.tensor([schedule.delta[t]], dtype=torch.float32),
            )
        return eps[0].numpy().astype(np.float64)


class ToyBackbone(Backbone):
    name = "toy"

    def __init__(
        self,
        schedule=None,
        factor=1,
        working_resolution=64,
        token_dim=32,
        seed=0,
        noise_predictor=None,
    ):
        super().__init__(schedule or SamplerSchedule.linear())
        self.codec = ToyCodec(factor)
        self.text_encoder = ToyTextEncoder(token_dim)
        self.downscale = self.codec.factor
        self.latent_channels = self.codec.latent_channels
        if working_resolution % self.downscale:
            raise DimensionMismatchError(
                "Working resolution {} is not divisible by {}".format(
                    working_resolution, self.downscale
                )
            )
        self.working_resolution = working_resolution
        self.denoiser = ToyDenoiser(
            latent_channels=self.latent_channels, token_dim=token_dim, seed=seed
        )
        self.noise_predictor = (
            noise_predictor
            if noise_predictor is not None
            else DenoiserPredictor(self.denoiser)
        )
        self.adapter_config = None

    def encode(self, image):
        return self.codec.encode(image)

    def decode(self, latent):
        return self.codec.decode(latent)

    def encode_text(self, prompt):
        return self.text_encoder.encode(prompt)

    def predict_noise(self, z, cond, t):
        if self.noise_predictor is None:
            raise BackboneUnavailableError("No noise predictor is bound")
        z = as_latent(z)
        g = cond.guidance_scale
        eps_cond = eps_uncond = None
        if g != 0.0:
            eps_cond = self.noise_predictor(
                z, cond.embedding.tokens, t, self.schedule
            )
        if g != 1.0:
            eps_uncond = self.noise_predictor(
                z, self.encode_text("").tokens, t, self.schedule
            )
        if eps_uncond is None:
            return eps_cond
        if eps_cond is None:
            return eps_uncond
        return eps_uncond + g * (eps_cond - eps_uncond)

    # Training hooks

    def add_adapters(self, adapter_config):
        self.denoiser.add_adapters(
            adapter_config.rank,
            adapter_config.target_projections,
            alpha=adapter_config.alpha,
        )
        self.adapter_config = adapter_config

    def trainable_parameters(self):
        return [
            p
            for name, p in self.denoiser.named_parameters()
            if "lora_" in name
        ]

    def freeze_base(self):
        for name, p in self.denoiser.named_parameters():
            p.requires_grad_("lora_" in name)

    def adapter_state(self):
        return {
            name: p.detach().numpy().copy()
            for name, p in self.denoiser.named_parameters()
            if "lora_" in name
        }

    def load_adapter_state(self, state):
        params = dict(self.denoiser.named_parameters())
        missing = [name for name in state if name not in params]
        if missing:
            raise DimensionMismatchError(
                "Checkpoint holds unknown adapter tensors: {}".format(missing)
            )
        with torch.no_grad():
            for name, value in state.items():
                params[name].copy_(
                    torch.as_tensor(np.asarray(value), dtype=params[name].dtype)
                )

    def base_weights_hash(self):
        # Names are taken as if unwrapped so the hash is the same with or
        # without adapters attached.
        base = {
            name.replace(".base.", "."): p
            for name, p in self.denoiser.named_parameters()
            if "lora_" not in name
        }
        digest = hashlib.sha256()
        for name in sorted(base):
            digest.update(name.encode("utf-8"))
            digest.update(base[name].detach().numpy().tobytes())
        return digest.hexdigest()

    def predict_noise_train(self, z_t, tokens, t):
        alpha = torch.as_tensor(self.schedule.alpha[t], dtype=z_t.dtype)
        delta = torch.as_tensor(self.schedule.delta[t], dtype=z_t.dtype)
        return self.denoiser(z_t, tokens, alpha.reshape(-1), delta.reshape(-1))
