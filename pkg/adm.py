# -*- coding: utf-8 -*-
"""
Attribute decoupling: attribute dictionaries extracted from subject images,
attribute-rich prompts without the identity token, and the regularization
set generated from them.
"""
import hashlib
import itertools
import json
import logging
import os
import random
import re

import attr
import numpy as np

from backbones.types import Conditioning, as_mask
from enums.attribute_category import AttributeCategory
from errors import (
    IdentityTokenLeakError,
    InsufficientCombinationsError,
    MalformedVlmResponseError,
    PromptIntegrityError,
    RegularizationError,
    VlmUnavailableError,
)
from utils import image_io

LOG = logging.getLogger(__name__)

CATEGORY_NAMES = [c.value for c in AttributeCategory.dictionary_categories()]
MAX_FAILURE_RATE = 0.1


def _normalize_words(words):
    seen = []
    for word in words:
        word = str(word).strip().lower()
        if word and word not in seen:
            seen.append(word)
    return seen


def _normalize_categories(categories):
    unknown = set(categories) - set(CATEGORY_NAMES)
    if unknown:
        raise ValueError("Unknown attribute categories: {}".format(sorted(unknown)))
    return {
        name: _normalize_words(categories.get(name, []))
        for name in CATEGORY_NAMES
    }


def _nonempty(instance, attribute, value):
    if not value or not value.strip():
        raise ValueError("{} must be nonempty".format(attribute.name))


@attr.s(frozen=True)
class AttributeDictionary:
    subject_class = attr.ib(converter=lambda s: str(s).strip(), validator=_nonempty)
    categories = attr.ib(factory=dict, converter=_normalize_categories)
    provenance = attr.ib(factory=dict)

    def words(self, category=None):
        if category is not None:
            return list(self.categories[AttributeCategory(category).value])
        return [w for name in CATEGORY_NAMES for w in self.categories[name]]

    def is_empty(self):
        return not self.words()

    def to_json(self):
        return {
            "subject_class": self.subject_class,
            "categories": self.categories,
            "provenance": self.provenance,
        }

    @classmethod
    def from_json(cls, data):
        return cls(
            subject_class=data["subject_class"],
            categories=data.get("categories", {}),
            provenance=data.get("provenance", {}),
        )

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_json(json.load(f))


@attr.s(frozen=True)
class PromptRecord:
    text = attr.ib()
    has_identity_token = attr.ib(default=False)
    attributes_used = attr.ib(factory=tuple, converter=lambda v: tuple(
        (str(c), str(w)) for c, w in v))

    def to_json(self):
        return {
            "text": self.text,
            "has_identity_token": self.has_identity_token,
            "attributes_used": [list(pair) for pair in self.attributes_used],
        }

    @classmethod
    def from_json(cls, data):
        return cls(
            text=data["text"],
            has_identity_token=data.get("has_identity_token", False),
            attributes_used=data.get("attributes_used", []),
        )


def contains_identity_token(text, identity_token="sks"):
    return identity_token.lower() in re.findall(r"\w+", text.lower())


def check_regularization_prompts(prompts, dictionary, identity_token="sks"):
    texts = set()
    for prompt in prompts:
        if prompt.has_identity_token or contains_identity_token(
            prompt.text, identity_token
        ):
            raise IdentityTokenLeakError(
                "Regularization prompt carries the identity token: '{}'".format(
                    prompt.text
                )
            )
        for category, word in prompt.attributes_used:
            if word not in dictionary.words(category):
                raise PromptIntegrityError(
                    "Attribute '{}' ({}) is not in the dictionary".format(
                        word, category
                    )
                )
        if prompt.text in texts:
            raise PromptIntegrityError("Duplicate prompt '{}'".format(prompt.text))
        texts.add(prompt.text)


def validate_dictionary_response(response):
    """
    Expected shape: {"categories": {<category>: [<word>, ...]}}.
    """
    if not isinstance(response, dict) or not isinstance(
        response.get("categories"), dict
    ):
        raise MalformedVlmResponseError(
            "Response lacks a 'categories' object: {}".format(response)
        )
    categories = response["categories"]
    for name, words in categories.items():
        if name not in CATEGORY_NAMES:
            raise MalformedVlmResponseError(
                "Unknown category '{}' in response".format(name)
            )
        if not isinstance(words, list) or not all(
            isinstance(w, str) for w in words
        ):
            raise MalformedVlmResponseError(
                "Category '{}' must map to a list of strings".format(name)
            )
    return categories


def _with_retry(call, validate, what):
    for attempt in range(2):
        try:
            return validate(call())
        except MalformedVlmResponseError as e:
            if attempt:
                raise
            LOG.warning("Malformed VLM {} response, retrying: {}".format(what, e))


def extract_dictionary(subject_images, subject_class, vlm):
    if not subject_images:
        raise ValueError("extract_dictionary needs at least one subject image")
    categories = _with_retry(
        lambda: vlm.describe_attributes(subject_images, subject_class),
        validate_dictionary_response,
        "dictionary",
    )
    request_hash = hashlib.sha256(
        json.dumps(
            {"subject_class": subject_class, "categories": CATEGORY_NAMES},
            sort_keys=True,
        ).encode("utf-8")
    ).hexdigest()[:16]
    dictionary = AttributeDictionary(
        subject_class=subject_class,
        categories=categories,
        provenance={"model": vlm.model_id, "prompt_hash": request_hash},
    )
    LOG.info(
        "Extracted {} attribute word(s) for {}".format(
            len(dictionary.words()), subject_class
        )
    )
    return dictionary


def render_prompt(subject_class, attributes):
    adjectives = [w for c, w in attributes if c != AttributeCategory.ACCESSORY.value]
    accessories = [w for c, w in attributes if c == AttributeCategory.ACCESSORY.value]
    text = " ".join(["a"] + adjectives + [subject_class])
    for accessory in accessories:
        text += " with a {}".format(accessory)
    return text


def _combinations(dictionary, size):
    filled = [name for name in CATEGORY_NAMES if dictionary.categories[name]]
    for chosen in itertools.combinations(filled, size):
        for words in itertools.product(
            *[dictionary.categories[name] for name in chosen]
        ):
            yield tuple(zip(chosen, words))


def fallback_compose(dictionary, n, rng_seed):
    """
    Coverage first: each dictionary word once in a single-attribute prompt,
    then seeded combinations whose size is uniform in {1, 2, 3}.
    """
    rng = random.Random(rng_seed)
    singles = [((name, w),) for name in CATEGORY_NAMES
               for w in dictionary.categories[name]]
    if len(singles) > n:
        keep = sorted(rng.sample(range(len(singles)), n))
        singles = [singles[i] for i in keep]
    chosen = list(singles)
    pools = {
        size: [c for c in _combinations(dictionary, size) if c not in chosen]
        for size in (1, 2, 3)
    }
    while len(chosen) < n:
        sizes = [size for size in (1, 2, 3) if pools[size]]
        if not sizes:
            break
        pool = pools[rng.choice(sizes)]
        chosen.append(pool.pop(rng.randrange(len(pool))))
    return [
        PromptRecord(
            text=render_prompt(dictionary.subject_class, attributes),
            has_identity_token=False,
            attributes_used=attributes,
        )
        for attributes in chosen
    ]


def _validate_prompt_response(response):
    if not isinstance(response, dict) or not isinstance(
        response.get("prompts"), list
    ):
        raise MalformedVlmResponseError(
            "Response lacks a 'prompts' list: {}".format(response)
        )
    records = []
    for item in response["prompts"]:
        if not isinstance(item, dict) or not isinstance(item.get("text"), str):
            raise MalformedVlmResponseError("Bad prompt entry: {}".format(item))
        records.append(
            PromptRecord(
                text=item["text"].strip(),
                has_identity_token=False,
                attributes_used=item.get("attributes", []),
            )
        )
    return records


def compose_prompts(dictionary, n, vlm=None, rng_seed=0, identity_token="sks"):
    if n < 1:
        raise ValueError("n must be at least 1, got {}".format(n))
    if dictionary.is_empty():
        raise InsufficientCombinationsError(
            "The attribute dictionary for {} is empty".format(
                dictionary.subject_class
            )
        )
    records = None
    if vlm is not None:
        try:
            records = _with_retry(
                lambda: vlm.compose_prompts(dictionary.to_json(), n),
                _validate_prompt_response,
                "prompt",
            )
        except VlmUnavailableError as e:
            LOG.info("Falling back to the template composer: {}".format(e))
    if records is None:
        records = fallback_compose(dictionary, n, rng_seed)
    unique = []
    for record in records:
        if record.text not in [r.text for r in unique]:
            unique.append(record)
    if len(unique) < n:
        raise InsufficientCombinationsError(
            "Only {} distinct prompts can be built, {} requested".format(
                len(unique), n
            )
        )
    unique = unique[:n]
    check_regularization_prompts(unique, dictionary, identity_token)
    return unique


@attr.s(frozen=True)
class CenteredBoxMaskPolicy:
    """
    Centered box covering a seeded fraction of the image area.
    """

    min_area = attr.ib(default=0.4)
    max_area = attr.ib(default=0.7)

    def __call__(self, height, width, seed):
        rng = np.random.default_rng(seed)
        area = rng.uniform(self.min_area, self.max_area)
        aspect = rng.uniform(0.75, 1.0 / 0.75)
        box_h = int(round(min(height, np.sqrt(area * height * width * aspect))))
        box_w = int(round(min(width, area * height * width / max(box_h, 1))))
        top = (height - box_h) // 2
        left = (width - box_w) // 2
        mask = np.zeros((height, width), dtype=bool)
        mask[top : top + box_h, left : left + box_w] = True
        return mask


@attr.s(frozen=True)
class FullMaskPolicy:
    def __call__(self, height, width, seed):
        return np.ones((height, width), dtype=bool)


@attr.s(frozen=True)
class RegularizationSample:
    image = attr.ib()
    prompt = attr.ib()
    mask = attr.ib(converter=as_mask)
    seed = attr.ib(default=0)


@attr.s
class RegularizationSet:
    samples = attr.ib(factory=list)
    target_count = attr.ib(default=0)
    provenance = attr.ib(factory=dict)
    # (prompt index, reason) for each sample that could not be generated
    failures = attr.ib(factory=list)

    def __attrs_post_init__(self):
        if len(self.samples) + len(self.failures) != self.target_count:
            raise RegularizationError(
                "Regularization set holds {} samples and {} failures, expected {}".format(
                    len(self.samples), len(self.failures), self.target_count
                )
            )
        for sample in self.samples:
            if sample.prompt.has_identity_token:
                raise IdentityTokenLeakError(
                    "Regularization prompt '{}' has the identity token".format(
                        sample.prompt.text
                    )
                )

    def save(self, directory):
        os.makedirs(os.path.join(directory, "images"), exist_ok=True)
        os.makedirs(os.path.join(directory, "masks"), exist_ok=True)
        entries = []
        for index, sample in enumerate(self.samples):
            name = "{:04d}.png".format(index)
            image_io.write_image(os.path.join(directory, "images", name), sample.image)
            image_io.write_mask(os.path.join(directory, "masks", name), sample.mask)
            entries.append(
                {
                    "image": os.path.join("images", name),
                    "mask": os.path.join("masks", name),
                    "prompt": sample.prompt.to_json(),
                    "seed": sample.seed,
                }
            )
        manifest = {
            "target_count": self.target_count,
            "provenance": self.provenance,
            "failures": [list(f) for f in self.failures],
            "samples": entries,
        }
        path = os.path.join(directory, "manifest.json")
        with open(path, "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
        return path

    @classmethod
    def load(cls, directory, size=None):
        with open(os.path.join(directory, "manifest.json")) as f:
            manifest = json.load(f)
        samples = [
            RegularizationSample(
                image=image_io.read_image(
                    os.path.join(directory, entry["image"]), size=size
                ),
                prompt=PromptRecord.from_json(entry["prompt"]),
                mask=image_io.read_mask(
                    os.path.join(directory, entry["mask"]), size=size
                ),
                seed=entry["seed"],
            )
            for entry in manifest["samples"]
        ]
        return cls(
            samples=samples,
            target_count=manifest["target_count"],
            provenance=manifest.get("provenance", {}),
            failures=[tuple(f) for f in manifest.get("failures", [])],
        )


def generate_image(generator, prompt_text, seed, guidance_scale=1.0):
    resolution = generator.working_resolution
    cond = Conditioning(generator.encode_text(prompt_text), guidance_scale)
    latent = generator.sample(
        cond, generator.latent_shape(resolution, resolution), seed
    )
    return generator.decode(latent)


def synthesize_regularization(
    prompts,
    generator,
    mask_source=None,
    seed=0,
    out_dir=None,
    provenance=None,
    target_count=None,
):
    """
    One image per prompt from the backbone in full-mask generation mode, plus
    one mask per the policy. Fails when more than 10% of the samples fail.
    `target_count` is the configured set size and defaults to len(prompts).
    """
    target_count = len(prompts) if target_count is None else target_count
    mask_source = mask_source or CenteredBoxMaskPolicy()
    resolution = generator.working_resolution
    samples = []
    failures = []
    for index, prompt in enumerate(prompts):
        sample_seed = seed + index
        try:
            image = generate_image(generator, prompt.text, sample_seed)
            mask = mask_source(resolution, resolution, sample_seed)
        except Exception as e:
            LOG.warning(
                "Regularization sample {} ('{}') failed: {}".format(
                    index, prompt.text, e
                )
            )
            failures.append((index, str(e)))
            continue
        samples.append(RegularizationSample(image, prompt, mask, sample_seed))
    if prompts and len(failures) > MAX_FAILURE_RATE * len(prompts):
        raise RegularizationError(
            "{} of {} regularization samples failed: {}".format(
                len(failures), len(prompts), failures
            )
        )
    reg_set = RegularizationSet(
        samples=samples,
        target_count=target_count,
        provenance=dict(provenance or {}, requested=len(prompts)),
        failures=failures,
    )
    if out_dir is not None:
        reg_set.save(out_dir)
    LOG.info("Synthesized {} regularization samples".format(len(samples)))
    return reg_set
