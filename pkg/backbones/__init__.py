import logging

from backbones.base import Backbone
from backbones.schedule import SamplerSchedule, forward_noise
from backbones.toy import ToyBackbone
from backbones.types import Conditioning, TextEmbedding
from errors import BackboneUnavailableError

LOG = logging.getLogger(__name__)


def load_backbone(name, schedule=None, seed=0, working_resolution=64):
    """
    Resolves a backbone identifier from the run config: "toy", "toy-f8" or
    "diffusers:<model id>".
    """
    LOG.debug("Loading backbone {}".format(name))
    if name == "toy":
        return ToyBackbone(
            schedule=schedule, seed=seed, working_resolution=working_resolution
        )
    if name == "toy-f8":
        return ToyBackbone(
            schedule=schedule,
            factor=8,
            seed=seed,
            working_resolution=working_resolution,
        )
    if name.startswith("diffusers:"):
        from backbones.diffusers_backbone import DiffusersInpaintBackbone

        return DiffusersInpaintBackbone(
            name.split(":", 1)[1], schedule=schedule
        )
    raise BackboneUnavailableError("Unknown backbone '{}'".format(name))
