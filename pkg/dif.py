# -*- coding: utf-8 -*-
"""
The two-stage inpainting sampler.

Local content generation (LCG) denoises an enlarged crop around the mask for
the first ceil(lambda * T) steps; the decoded patch is pasted back into the
background and global context harmonization (GCH) finishes the remaining
steps, blending against the original mask.
"""
import logging
import math
import os

import attr
import numpy as np
from PIL import Image

from backbones.schedule import SamplerSchedule
from backbones.types import Conditioning, as_image, as_latent, as_mask
from enums.stage import Stage
from errors import (
    DimensionMismatchError,
    EmptyMaskError,
    GeometryMismatchError,
    MultiInpaintError,
    PipelineError,
)
from utils import container, image_io

LOG = logging.getLogger(__name__)

SAMPLERS = ("ddim", "ancestral")


@attr.s(frozen=True)
class Box:
    top = attr.ib()
    left = attr.ib()
    height = attr.ib()
    width = attr.ib()

    @property
    def bottom(self):
        return self.top + self.height

    @property
    def right(self):
        return self.left + self.width

    @property
    def slices(self):
        return slice(self.top, self.bottom), slice(self.left, self.right)

    @property
    def area(self):
        return self.height * self.width

    def fill(self, height, width):
        mask = np.zeros((height, width), dtype=bool)
        mask[self.slices] = True
        return mask


@attr.s(frozen=True)
class PlacementRecord:
    box = attr.ib()
    image_height = attr.ib()
    image_width = attr.ib()
    working_resolution = attr.ib()

    @property
    def scale(self):
        return (
            self.working_resolution / self.box.height,
            self.working_resolution / self.box.width,
        )

    @property
    def is_full_frame(self):
        return self.box == Box(0, 0, self.image_height, self.image_width)


def mask_bbox(mask):
    mask = as_mask(mask)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise EmptyMaskError("Mask selects no pixels")
    return Box(
        top=int(rows[0]),
        left=int(cols[0]),
        height=int(rows[-1] - rows[0] + 1),
        width=int(cols[-1] - cols[0] + 1),
    )


def enlarge_box(box, ratio, height, width):
    if ratio < 0:
        raise ValueError("Enlarge ratio must be nonnegative, got {}".format(ratio))
    pad = int(math.ceil(ratio * max(box.height, box.width) - 1e-9))
    top = max(box.top - pad, 0)
    left = max(box.left - pad, 0)
    bottom = min(box.bottom + pad, height)
    right = min(box.right + pad, width)
    return Box(top, left, bottom - top, right - left)


def enlarge_mask(mask, ratio):
    """
    Solid rectangle around the mask's bounding box, padded on each side by
    ratio times the longer box side and clipped to the image.
    """
    mask = as_mask(mask)
    height, width = mask.shape
    return enlarge_box(mask_bbox(mask), ratio, height, width).fill(height, width)


def crop_region(image, region_mask, working_resolution):
    image = as_image(image)
    region_mask = as_mask(region_mask)
    if region_mask.shape != image.shape[:2]:
        raise DimensionMismatchError(
            "Mask {} does not match image {}".format(
                region_mask.shape, image.shape[:2]
            )
        )
    box = mask_bbox(region_mask)
    placement = PlacementRecord(
        box=box,
        image_height=image.shape[0],
        image_width=image.shape[1],
        working_resolution=working_resolution,
    )
    patch = image_io.resize_image(
        image[box.slices], working_resolution, working_resolution, Image.BICUBIC
    )
    return patch, placement


def crop_mask(mask, placement, height=None, width=None):
    """
    The mask under a placement's box, resized to (height, width), by default
    the working resolution.
    """
    mask = as_mask(mask)
    height = height or placement.working_resolution
    width = width or placement.working_resolution
    return image_io.resize_mask(mask[placement.box.slices], height, width)


def repaste(patch, placement, background, within=None):
    """
    Resizes `patch` back onto the placement box. With `within` (a mask over
    the full background) only pixels under the mask are replaced.
    """
    background = as_image(background)
    patch = as_image(patch)
    if background.shape[:2] != (placement.image_height, placement.image_width):
        raise GeometryMismatchError(
            "Placement was recorded on a {}x{} image, background is {}x{}".format(
                placement.image_height,
                placement.image_width,
                background.shape[0],
                background.shape[1],
            )
        )
    if patch.shape[2] != background.shape[2]:
        raise GeometryMismatchError(
            "Patch has {} channels, background {}".format(
                patch.shape[2], background.shape[2]
            )
        )
    box = placement.box
    result = background.copy()
    resized = image_io.resize_image(patch, box.height, box.width, Image.BICUBIC)
    if within is None:
        result[box.slices] = resized
        return result
    within = as_mask(within)
    if within.shape != background.shape[:2]:
        raise DimensionMismatchError(
            "Paste mask {} does not match background {}".format(
                within.shape, background.shape[:2]
            )
        )
    result[box.slices] = np.where(
        within[box.slices][:, :, None], resized, result[box.slices]
    )
    return result


def downsample_mask(mask, height, width):
    return image_io.resize_mask(mask, height, width)


def blend(z_denoised, z_reference_t, region):
    z_denoised = np.asarray(z_denoised, dtype=np.float64)
    z_reference_t = np.asarray(z_reference_t, dtype=np.float64)
    region = as_mask(region)
    if z_denoised.shape != z_reference_t.shape:
        raise DimensionMismatchError(
            "Latent shapes differ: {} vs {}".format(
                z_denoised.shape, z_reference_t.shape
            )
        )
    if region.shape != z_denoised.shape[:2]:
        raise DimensionMismatchError(
            "Region {} does not match latent {}".format(
                region.shape, z_denoised.shape[:2]
            )
        )
    return np.where(region[:, :, None], z_denoised, z_reference_t)


@attr.s(frozen=True)
class InpaintRequest:
    background = attr.ib(converter=as_image)
    mask = attr.ib(converter=as_mask)
    conditioning = attr.ib(validator=attr.validators.instance_of(Conditioning))
    schedule = attr.ib(validator=attr.validators.instance_of(SamplerSchedule))
    seed = attr.ib(default=0, converter=int)
    enlarge_ratio = attr.ib(default=0.2, converter=float)
    gch_full_frame = attr.ib(default=False)
    sampler = attr.ib(default="ddim", validator=attr.validators.in_(SAMPLERS))

    def __attrs_post_init__(self):
        if self.mask.shape != self.background.shape[:2]:
            raise DimensionMismatchError(
                "Mask {} does not match background {}".format(
                    self.mask.shape, self.background.shape[:2]
                )
            )
        if not self.mask.any():
            raise EmptyMaskError("Inpainting mask selects no pixels")
        if self.enlarge_ratio < 0:
            raise ValueError("enlarge_ratio must be nonnegative")

    @property
    def enlarged_mask(self):
        return enlarge_mask(self.mask, self.enlarge_ratio)

    def with_background(self, background):
        return attr.evolve(self, background=background)


@attr.s(frozen=True)
class StageTraceEntry:
    stage = attr.ib(converter=Stage)
    step_t = attr.ib()
    blended_latent = attr.ib()


def _set_context(backbone, patch, region):
    set_context = getattr(backbone, "set_inpaint_context", None)
    if set_context is not None:
        set_context(region, patch * (1.0 - region[:, :, None]))


def _denoise(backbone, request, z_ref, region, start, stop, rng, stage, trace):
    """
    Runs predict_step from step `start` down to `stop` (exclusive of the
    start state), blending against the forward-noised reference each step.
    """
    eps = rng.standard_normal(z_ref.shape)
    z = backbone.forward_noise(z_ref, start, eps)
    for t in range(start - 1, stop - 1, -1):
        noise = (
            rng.standard_normal(z_ref.shape)
            if request.sampler == "ancestral"
            else None
        )
        z_pred = backbone.predict_step(z, request.conditioning, t, noise=noise)
        z = blend(z_pred, backbone.forward_noise(z_ref, t, eps), region)
        LOG.debug("{} step {} done".format(stage.value, t))
        if trace is not None:
            trace.append(StageTraceEntry(stage, t, z))
    return as_latent(z)


def run_lcg(request, backbone, trace=None):
    """
    Returns the local patch, its placement in the background and the stage
    trace.
    """
    trace = [] if trace is None else trace
    schedule = request.schedule
    region = request.enlarged_mask
    patch, placement = crop_region(
        request.background, region, backbone.working_resolution
    )
    z_ref = backbone.encode(patch)
    steps = schedule.lcg_steps
    if steps == 0:
        return backbone.decode(z_ref), placement, trace
    crop_region_mask = crop_mask(region, placement)
    region_latent = downsample_mask(crop_region_mask, *z_ref.shape[:2])
    _set_context(backbone, patch, crop_region_mask)
    rng = np.random.default_rng([request.seed, 0])
    end = schedule.T - steps
    z = _denoise(
        backbone, request, z_ref, region_latent, schedule.T, end, rng,
        Stage.LCG, trace,
    )
    if end > 0:
        eps = backbone.predict_noise(z, request.conditioning, end)
        z = blend(backbone.estimate_clean(z, eps, end), z_ref, region_latent)
    LOG.info("LCG finished {} steps on a {}x{} crop".format(
        steps, placement.box.height, placement.box.width))
    return backbone.decode(z), placement, trace


def run_gch(x_g, request, backbone, start_step=None, trace=None):
    schedule = request.schedule
    steps = schedule.gch_steps
    if start_step is not None and start_step != steps:
        raise PipelineError(
            "GCH must start at step {}, got {}".format(steps, start_step)
        )
    x_g = as_image(x_g)
    if steps == 0:
        return x_g.copy()
    height, width = request.mask.shape
    if request.gch_full_frame:
        region = np.ones((height, width), dtype=bool)
    else:
        region = request.enlarged_mask
    patch, placement = crop_region(x_g, region, backbone.working_resolution)
    z_ref = backbone.encode(patch)
    crop_edit_mask = crop_mask(request.mask, placement)
    mask_latent = downsample_mask(crop_edit_mask, *z_ref.shape[:2])
    _set_context(backbone, patch, crop_edit_mask)
    rng = np.random.default_rng([request.seed, 1])
    z = _denoise(
        backbone, request, z_ref, mask_latent, steps, 0, rng, Stage.GCH, trace
    )
    LOG.info("GCH finished {} steps".format(steps))
    return repaste(backbone.decode(z), placement, x_g, within=request.enlarged_mask)


def run_single_stage(request, backbone, trace=None):
    """
    Full-frame blended sampling with the original mask for all T steps.
    """
    schedule = request.schedule
    background = request.background
    patch, placement = crop_region(
        background,
        np.ones(background.shape[:2], dtype=bool),
        backbone.working_resolution,
    )
    z_ref = backbone.encode(patch)
    crop_edit_mask = crop_mask(request.mask, placement)
    mask_latent = downsample_mask(crop_edit_mask, *z_ref.shape[:2])
    _set_context(backbone, patch, crop_edit_mask)
    rng = np.random.default_rng([request.seed, 1])
    z = _denoise(
        backbone, request, z_ref, mask_latent, schedule.T, 0, rng, Stage.GCH,
        trace,
    )
    return repaste(
        backbone.decode(z), placement, background, within=request.enlarged_mask
    )


def dump_trace(trace, trace_dir):
    os.makedirs(trace_dir, exist_ok=True)
    for entry in trace:
        container.write_array(
            os.path.join(
                trace_dir, "{}_{:03d}.dmlt".format(entry.stage.value, entry.step_t)
            ),
            entry.blended_latent,
        )
    LOG.info("Wrote {} trace latents to {}".format(len(trace), trace_dir))


def inpaint(request, backbone, use_dif=True, trace_dir=None):
    trace = []
    if not use_dif:
        result = run_single_stage(request, backbone, trace)
    else:
        x_l, placement, trace = run_lcg(request, backbone, trace)
        x_g = repaste(x_l, placement, request.background)
        result = run_gch(x_g, request, backbone, trace=trace)
    if trace_dir is not None:
        dump_trace(trace, trace_dir)
    return result


def inpaint_multi(requests, background, backbone, use_dif=True):
    """
    Composites the requests one after another; each request runs on the
    previous result. `backbone` is one backbone or a list aligned with
    `requests` when subjects carry different adapters.
    """
    if isinstance(backbone, (list, tuple)):
        backbones = list(backbone)
    else:
        backbones = [backbone] * len(requests)
    if len(backbones) != len(requests):
        raise ValueError("Expected one backbone per request")
    result = as_image(background)
    for index, (request, model) in enumerate(zip(requests, backbones)):
        try:
            result = inpaint(request.with_background(result), model, use_dif)
        except PipelineError as e:
            raise MultiInpaintError(index, e)
        LOG.info("Composited request {} of {}".format(index + 1, len(requests)))
    return result
