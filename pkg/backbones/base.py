import abc
import logging

import numpy as np

from backbones.schedule import forward_noise
from backbones.types import as_latent
from errors import BackboneUnavailableError, ScheduleRangeError

LOG = logging.getLogger(__name__)


class Backbone(abc.ABC):
    """
    A text-conditioned latent diffusion model reduced to the calls the
    pipeline needs.

    Instances are not safe for concurrent calls; callers serialize per
    instance.
    """

    name = "backbone"
    # Side of the square crops fed to the model, in pixels.
    working_resolution = 64
    downscale = 1
    latent_channels = 3

    def __init__(self, schedule):
        self.schedule = schedule

    @abc.abstractmethod
    def encode(self, image):
        pass

    @abc.abstractmethod
    def decode(self, latent):
        pass

    @abc.abstractmethod
    def encode_text(self, prompt):
        pass

    @abc.abstractmethod
    def predict_noise(self, z, cond, t):
        """
        Guided noise estimate for latent `z` sitting at step `t`.
        """

    def forward_noise(self, latent, t, noise):
        return forward_noise(latent, t, noise, self.schedule)

    def predict_step(self, z, cond, t, noise=None):
        """
        One reverse update from step t+1 to step t.

        Without `noise` the update reuses the predicted noise (deterministic
        DDIM); with `noise` it is the ancestral update with the injected
        noise.
        """
        schedule = self.schedule
        if not 0 <= t < schedule.T:
            raise ScheduleRangeError(
                "predict_step needs 0 <= t < {}, got {}".format(schedule.T, t)
            )
        z = as_latent(z)
        eps = self.predict_noise(z, cond, t + 1)
        clean = self.estimate_clean(z, eps, t + 1)
        injected = eps if noise is None else np.asarray(noise, dtype=np.float64)
        return schedule.alpha[t] * clean + schedule.delta[t] * injected

    def estimate_clean(self, z, eps, t):
        return (z - self.schedule.delta[t] * eps) / self.schedule.alpha[t]

    def sample(self, cond, latent_shape, seed, ancestral=False):
        """
        Full-frame generation from pure noise.
        """
        rng = np.random.default_rng(seed)
        T = self.schedule.T
        z = self.forward_noise(
            np.zeros(latent_shape), T, rng.standard_normal(latent_shape)
        )
        for t in range(T - 1, -1, -1):
            noise = rng.standard_normal(latent_shape) if ancestral else None
            z = self.predict_step(z, cond, t, noise=noise)
        return z

    def latent_shape(self, height, width):
        return (
            height // self.downscale,
            width // self.downscale,
            self.latent_channels,
        )

    # Training hooks. Backbones that cannot be fine-tuned keep the defaults.

    def add_adapters(self, adapter_config):
        raise BackboneUnavailableError(
            "{} does not support adapters".format(self.name)
        )

    def trainable_parameters(self):
        return []

    def adapter_state(self):
        return {}

    def load_adapter_state(self, state):
        raise BackboneUnavailableError(
            "{} does not support adapters".format(self.name)
        )

    def base_weights_hash(self):
        raise BackboneUnavailableError(
            "{} does not expose its base weights".format(self.name)
        )

    def predict_noise_train(self, z_t, tokens, t):
        raise BackboneUnavailableError(
            "{} cannot be trained".format(self.name)
        )
