# -*- coding: utf-8 -*-
"""
CLIP-T / CLIP-I / DINO similarities measured on the cropped and enlarged
inpainted region of each result.
"""
import json
import logging
import math
import os

import attr
import numpy as np

from backbones.types import as_image
from dif import crop_region, enlarge_mask, mask_bbox
from enums.task import Task
from errors import EmptyResultsError, IdMisalignmentError, ZeroNormError
from utils import formatter, image_io

LOG = logging.getLogger(__name__)

METRICS = ("clip_t", "clip_i", "dino")
TABLE_HEADER = ("task", "n", "CLIP-T", "CLIP-I", "DINO")


def cosine(u, v):
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if u.shape != v.shape:
        raise ValueError("Vectors differ in dim: {} vs {}".format(u.size, v.size))
    norms = np.linalg.norm(u) * np.linalg.norm(v)
    if norms == 0:
        raise ZeroNormError("Cosine of a zero-norm vector")
    return float(np.clip(np.dot(u, v) / norms, -1.0, 1.0))


def metric_box(mask, ratio=0.2):
    return mask_bbox(enlarge_mask(mask, ratio))


def crop_metric_region(result, mask, ratio=0.2, resolution=224):
    patch, _ = crop_region(result, enlarge_mask(mask, ratio), resolution)
    return patch


def _in_unit_range(instance, attribute, value):
    if not math.isfinite(value) or not -1.0 <= value <= 1.0:
        raise ValueError("{} must lie in [-1, 1], got {}".format(attribute.name, value))


@attr.s(frozen=True)
class EvalRecord:
    sample_id = attr.ib()
    task = attr.ib(converter=Task)
    clip_t = attr.ib(converter=float, validator=_in_unit_range)
    clip_i = attr.ib(converter=float, validator=_in_unit_range)
    dino = attr.ib(converter=float, validator=_in_unit_range)
    cropped = attr.ib(default=False)

    def to_json(self):
        return {
            "sample_id": self.sample_id,
            "task": self.task.value,
            "clip_t": self.clip_t,
            "clip_i": self.clip_i,
            "dino": self.dino,
            "cropped": self.cropped,
        }


@attr.s(frozen=True)
class EvalReport:
    task = attr.ib(converter=Task)
    records = attr.ib(converter=list)

    def __attrs_post_init__(self):
        if not self.records:
            raise EmptyResultsError("No records to report")
        uncropped = [r.sample_id for r in self.records if not r.cropped]
        if uncropped:
            raise ValueError(
                "Records were not computed on cropped regions: {}".format(uncropped)
            )
        other = [r.sample_id for r in self.records if r.task is not self.task]
        if other:
            raise ValueError("Records from another task: {}".format(other))

    @property
    def n(self):
        return len(self.records)

    @property
    def means(self):
        return {
            metric: sum(getattr(r, metric) for r in self.records) / self.n
            for metric in METRICS
        }

    def to_json(self):
        return {
            "task": self.task.value,
            "n": self.n,
            "means": self.means,
            "records": [r.to_json() for r in self.records],
        }

    def table(self):
        means = self.means
        return formatter.render_table(
            TABLE_HEADER,
            [[self.task.value, self.n] + [means[m] for m in METRICS]],
        )

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2, sort_keys=True)
        with open(os.path.splitext(path)[0] + ".txt", "w") as f:
            f.write(self.table() + "\n")
        LOG.info("Wrote {} report ({} records) to {}".format(self.task.value, self.n, path))
        return path


def _check_alignment(results, **handles):
    ids = set(results)
    missing = set()
    for handle in handles.values():
        missing |= ids.symmetric_difference(handle)
    if missing:
        raise IdMisalignmentError(missing)


def evaluate_run(
    results,
    sources,
    prompts,
    masks,
    embedders,
    task=Task.IDENTITY,
    crop_ratio=0.2,
    resolution=224,
):
    """
    `results`, `sources`, `prompts` and `masks` map sample ids to the
    generated image, the reference subject image, the prompt and the
    inpainting mask. `embedders` maps "clip" and "dino" to handles.
    """
    if not results:
        raise EmptyResultsError("No results to evaluate")
    _check_alignment(results, sources=sources, prompts=prompts, masks=masks)
    clip = embedders["clip"]
    dino = embedders["dino"]
    records = []
    for sample_id in sorted(results):
        crop = crop_metric_region(
            results[sample_id], masks[sample_id], crop_ratio, resolution
        )
        source = as_image(sources[sample_id])
        source, _ = crop_region(
            source, np.ones(source.shape[:2], dtype=bool), resolution
        )
        crop_clip = clip.embed_image(crop)
        records.append(
            EvalRecord(
                sample_id=sample_id,
                task=task,
                clip_t=cosine(crop_clip, clip.embed_text(prompts[sample_id])),
                clip_i=cosine(crop_clip, clip.embed_image(source)),
                dino=cosine(dino.embed_image(crop), dino.embed_image(source)),
                cropped=True,
            )
        )
        LOG.debug("Scored {}".format(sample_id))
    return EvalReport(task=task, records=records)


def load_images(directory, ids, mask=False):
    """
    Reads `<id>.png` for every id present in `directory`.
    """
    read = image_io.read_mask if mask else image_io.read_image
    loaded = {}
    for sample_id in ids:
        path = os.path.join(directory, "{}.png".format(sample_id))
        if os.path.exists(path):
            loaded[sample_id] = read(path)
    return loaded
