# -*- coding: utf-8 -*-
"""
Benchmark builder: filters annotated background images and pairs them with
subjects and per-split prompt lists.
"""
import json
import logging
import os
import random

import attr
import numpy as np

from adm import PromptRecord
from enums.task import Task
from errors import AnnotationError, InsufficientBackgroundsError
from utils import image_io

LOG = logging.getLogger(__name__)

ANNOTATION_FILE = "annotations.json"


@attr.s(frozen=True)
class BackgroundEntry:
    image = attr.ib()
    width = attr.ib()
    height = attr.ib()
    # [x, y, w, h]
    box = attr.ib(converter=tuple)

    def to_json(self):
        return {
            "image": self.image,
            "width": self.width,
            "height": self.height,
            "box": list(self.box),
        }


def _parse_box(raw):
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise ValueError("box must be [x, y, w, h], got {}".format(raw))
    x, y, w, h = (int(round(float(v))) for v in raw)
    if w <= 0 or h <= 0 or x < 0 or y < 0:
        raise ValueError("box {} has no area or negative origin".format(raw))
    return x, y, w, h


def _best_box(boxes, width, height, min_box_side):
    qualifying = [
        (x, y, w, h)
        for x, y, w, h in boxes
        if min(w, h) >= min_box_side and x + w <= width and y + h <= height
    ]
    if not qualifying:
        return None
    return max(qualifying, key=lambda b: b[2] * b[3])


def filter_backgrounds(
    image_dir, min_resolution=256, min_box_side=64, annotation_path=None, strict=True
):
    """
    Keeps images whose shorter side reaches `min_resolution` and that carry
    at least one box whose shorter side reaches `min_box_side`; the largest
    such box becomes the mask. Unreadable entries are collected and raised
    together unless `strict` is off.
    """
    annotation_path = annotation_path or os.path.join(image_dir, ANNOTATION_FILE)
    with open(annotation_path) as f:
        annotations = json.load(f)
    if not isinstance(annotations, list):
        raise AnnotationError([(annotation_path, "expected a JSON list")])

    manifest = []
    failures = []
    for index, entry in enumerate(annotations):
        name = entry.get("image", "#{}".format(index)) if isinstance(entry, dict) else "#{}".format(index)
        try:
            if not isinstance(entry, dict) or "image" not in entry:
                raise ValueError("entry lacks an 'image' field")
            boxes = [_parse_box(b) for b in entry.get("boxes", [])]
            path = os.path.join(image_dir, entry["image"])
            width, height = image_io.image_size(path)
        except (OSError, ValueError, TypeError) as e:
            failures.append((name, str(e)))
            continue
        if min(width, height) < min_resolution:
            LOG.debug("Dropping {}: {}x{} below {}".format(name, width, height, min_resolution))
            continue
        box = _best_box(boxes, width, height, min_box_side)
        if box is None:
            LOG.debug("Dropping {}: no box with side >= {}".format(name, min_box_side))
            continue
        manifest.append(BackgroundEntry(path, width, height, box))

    if failures:
        if strict:
            raise AnnotationError(failures)
        for name, message in failures:
            LOG.warning("Skipping {}: {}".format(name, message))
    LOG.info("Kept {} of {} background(s)".format(len(manifest), len(annotations)))
    return manifest


@attr.s(frozen=True)
class BenchTuple:
    tuple_id = attr.ib()
    background_path = attr.ib()
    mask_path = attr.ib()
    subject_id = attr.ib()
    prompts = attr.ib(converter=tuple)
    split = attr.ib(converter=Task)
    box = attr.ib(converter=tuple)
    image_size = attr.ib(converter=tuple)

    def __attrs_post_init__(self):
        if not self.prompts:
            raise ValueError("Tuple {} has no prompts".format(self.tuple_id))
        if self.split is Task.EDITING:
            bare = [p.text for p in self.prompts if not p.attributes_used]
            if bare:
                raise ValueError(
                    "Editing prompts must name an attribute: {}".format(bare)
                )

    def mask(self):
        width, height = self.image_size
        x, y, w, h = self.box
        mask = np.zeros((height, width), dtype=bool)
        mask[y : y + h, x : x + w] = True
        return mask

    def to_json(self):
        return {
            "tuple_id": self.tuple_id,
            "background_path": self.background_path,
            "mask_path": self.mask_path,
            "subject_id": self.subject_id,
            "prompts": [p.to_json() for p in self.prompts],
            "split": self.split.value,
            "box": list(self.box),
            "image_size": list(self.image_size),
        }

    @classmethod
    def from_json(cls, data):
        return cls(
            tuple_id=data["tuple_id"],
            background_path=data["background_path"],
            mask_path=data["mask_path"],
            subject_id=data["subject_id"],
            prompts=[PromptRecord.from_json(p) for p in data["prompts"]],
            split=data["split"],
            box=data["box"],
            image_size=data["image_size"],
        )


IDENTITY_TEMPLATES = (
    "a {token} {cls}",
    "a photo of a {token} {cls}",
    "a {token} {cls} in the scene",
    "a close-up of a {token} {cls}",
)
EDITING_ATTRIBUTES = (
    ("color", "red"),
    ("color", "blue"),
    ("material", "glass"),
    ("texture", "fluffy"),
    ("material", "wooden"),
)


def default_prompt_sets(subject_class, identity_token="sks"):
    identity = [
        PromptRecord(
            text=template.format(token=identity_token, cls=subject_class),
            has_identity_token=True,
        )
        for template in IDENTITY_TEMPLATES
    ]
    editing = [
        PromptRecord(
            text="a {} {} {}".format(word, identity_token, subject_class),
            has_identity_token=True,
            attributes_used=[(category, word)],
        )
        for category, word in EDITING_ATTRIBUTES
    ]
    return {Task.IDENTITY.value: identity, Task.EDITING.value: editing}


def assemble(subjects, backgrounds, per_subject, prompt_sets, seed=0):
    """
    Draws `per_subject` distinct backgrounds for every subject; backgrounds
    may repeat across subjects. Each subject's draw is seeded by the run seed
    and its id, so reordering subjects only renumbers tuples. Splits
    alternate identity/editing in draw order.
    """
    if per_subject < 1:
        raise ValueError("per_subject must be at least 1")
    if per_subject > len(backgrounds):
        raise InsufficientBackgroundsError(
            "{} backgrounds per subject requested, only {} available".format(
                per_subject, len(backgrounds)
            )
        )
    tuples = []
    for subject_id in subjects:
        rng = random.Random("{}:{}".format(seed, subject_id))
        for draw, index in enumerate(rng.sample(range(len(backgrounds)), per_subject)):
            background = backgrounds[index]
            split = Task.IDENTITY if draw % 2 == 0 else Task.EDITING
            tuple_id = "{:05d}".format(len(tuples))
            tuples.append(
                BenchTuple(
                    tuple_id=tuple_id,
                    background_path=background.image,
                    mask_path=os.path.join("masks", "{}.png".format(tuple_id)),
                    subject_id=subject_id,
                    prompts=prompt_sets[subject_id][split.value],
                    split=split,
                    box=background.box,
                    image_size=(background.width, background.height),
                )
            )
    LOG.info("Assembled {} tuples for {} subject(s)".format(len(tuples), len(subjects)))
    return tuples


def materialize_masks(tuples, out_dir):
    """
    Writes each tuple's box mask to `<out_dir>/<mask_path>`.
    """
    for bench_tuple in tuples:
        path = os.path.join(out_dir, bench_tuple.mask_path)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        image_io.write_mask(path, bench_tuple.mask())
    return len(tuples)


def save_benchmark(tuples, path):
    with open(path, "w") as f:
        json.dump([t.to_json() for t in tuples], f, indent=2, sort_keys=True)
    return path


def load_benchmark(path):
    with open(path) as f:
        return [BenchTuple.from_json(entry) for entry in json.load(f)]


def expand_samples(tuples, task):
    """
    One sample per (tuple, prompt) of the given split, id "<tuple>-<k>".
    """
    task = Task(task)
    return [
        ("{}-{}".format(t.tuple_id, k), t, prompt)
        for t in tuples
        if t.split is task
        for k, prompt in enumerate(t.prompts)
    ]
