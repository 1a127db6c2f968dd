import math

import attr
import numpy as np

from errors import DimensionMismatchError, ScheduleRangeError


def _as_coefficients(value):
    return np.asarray(value, dtype=np.float64).reshape(-1)


@attr.s(frozen=True, eq=False)
class SamplerSchedule:
    """
    Noise schedule of T steps plus the LCG/GCH split fraction.

    alpha[t] scales the clean latent and delta[t] the noise at step t, so
    index 0 is the clean image and index T the noisiest state.
    """

    T = attr.ib(converter=int)
    lambda_split = attr.ib(converter=float)
    alpha = attr.ib(converter=_as_coefficients)
    delta = attr.ib(converter=_as_coefficients)

    def __attrs_post_init__(self):
        if self.T < 1:
            raise ScheduleRangeError("T must be positive, got {}".format(self.T))
        if not 0.0 <= self.lambda_split <= 1.0:
            raise ScheduleRangeError(
                "lambda_split must lie in [0, 1], got {}".format(
                    self.lambda_split
                )
            )
        for name, coefficients in (("alpha", self.alpha), ("delta", self.delta)):
            if coefficients.shape[0] != self.T + 1:
                raise ScheduleRangeError(
                    "{} must have T+1={} entries, got {}".format(
                        name, self.T + 1, coefficients.shape[0]
                    )
                )
            if np.any(coefficients < 0) or np.any(coefficients > 1):
                raise ScheduleRangeError("{} must lie in [0, 1]".format(name))
        if np.any(self.alpha <= 0):
            raise ScheduleRangeError("alpha must stay positive to invert the noising")
        if self.alpha[0] != 1.0 or self.delta[0] != 0.0:
            raise ScheduleRangeError("Step 0 must be the clean image")
        if np.any(np.diff(self.alpha) > 0):
            raise ScheduleRangeError("alpha must be non-increasing")
        if np.any(np.diff(self.delta) < 0):
            raise ScheduleRangeError("delta must be non-decreasing")

    @classmethod
    def linear(cls, T=50, lambda_split=0.7, alpha_min=0.1):
        """
        Linear alpha from 1 down to `alpha_min` with the variance preserving
        delta = sqrt(1 - alpha^2).
        """
        alpha = np.linspace(1.0, alpha_min, int(T) + 1)
        alpha[0] = 1.0
        delta = np.sqrt(np.clip(1.0 - alpha ** 2, 0.0, 1.0))
        delta[0] = 0.0
        return cls(T=T, lambda_split=lambda_split, alpha=alpha, delta=delta)

    def with_lambda(self, lambda_split):
        return attr.evolve(self, lambda_split=lambda_split)

    @property
    def lcg_steps(self):
        # Rounded before the ceil so that e.g. 0.3 * 50 counts as 15.
        return int(math.ceil(round(self.lambda_split * self.T, 9)))

    @property
    def gch_steps(self):
        return self.T - self.lcg_steps

    def check_step(self, t):
        if not 0 <= t <= self.T:
            raise ScheduleRangeError(
                "Step {} outside [0, {}]".format(t, self.T)
            )


def forward_noise(latent, t, noise, schedule):
    latent = np.asarray(latent, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if latent.shape != noise.shape:
        raise DimensionMismatchError(
            "Noise shape {} does not match latent shape {}".format(
                noise.shape, latent.shape
            )
        )
    schedule.check_step(t)
    return schedule.alpha[t] * latent + schedule.delta[t] * noise
