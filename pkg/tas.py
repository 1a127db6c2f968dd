# -*- coding: utf-8 -*-
"""
Textual attribute substitution: find the subject's original attribute that
the user's prompt edits and project its direction out of the prompt
embedding.
"""
import logging
import re

import attr
import numpy as np

from backbones.types import Conditioning, TextEmbedding
from enums.attribute_category import AttributeCategory
from enums.tas_mode import TasMode
from errors import (
    DimensionMismatchError,
    MalformedVlmResponseError,
    VlmUnavailableError,
    ZeroDirectionError,
)

LOG = logging.getLogger(__name__)

DEFAULT_TEMPLATE = "a {attributes} [class]"
MIN_DIRECTION_NORM = 1e-12


@attr.s(frozen=True)
class AttributeMatch:
    matched_words = attr.ib(factory=list)
    category = attr.ib(default=AttributeCategory.OTHER, converter=AttributeCategory)
    eliminate_prompt = attr.ib(default="")

    def __attrs_post_init__(self):
        if self.matched_words and not self.eliminate_prompt.strip():
            raise ValueError("A nonempty match needs an eliminate prompt")

    def __bool__(self):
        return bool(self.matched_words)


def eliminate_prompt(words, subject_class, template=DEFAULT_TEMPLATE):
    return template.format(attributes=" ".join(words)).replace(
        "[class]", subject_class
    )


def _normalize(text):
    return " ".join(re.findall(r"[a-z][a-z-]*", text.lower()))


def _mentions(normalized_text, phrase):
    # Whole-word phrase search, so "iron" is not found in "ironic".
    phrase = _normalize(phrase)
    return bool(phrase) and " {} ".format(phrase) in " {} ".format(normalized_text)


def keyword_match(user_prompt, dictionary, template=DEFAULT_TEMPLATE):
    """
    A prompt edits category c when it names a keyword of c that is not one
    of the dictionary's own words for c. Categories are tried in declaration
    order and the first edited one wins.
    """
    prompt = _normalize(user_prompt)
    for category in AttributeCategory.dictionary_categories():
        own = dictionary.words(category)
        if not own:
            continue
        edits = [k for k in category.keywords if _mentions(prompt, k) and k not in own]
        if not edits:
            continue
        matched = [w for w in own if not _mentions(prompt, w)]
        if not matched:
            continue
        LOG.debug(
            "Prompt edits {} ({}), suppressing {}".format(
                category.value, edits, matched
            )
        )
        return AttributeMatch(
            matched_words=matched,
            category=category,
            eliminate_prompt=eliminate_prompt(
                matched, dictionary.subject_class, template
            ),
        )
    return AttributeMatch()


def _vlm_match(user_prompt, dictionary, matcher, template):
    response = matcher.match_attributes(user_prompt, dictionary.to_json())
    if not isinstance(response, dict) or "matched_words" not in response:
        raise MalformedVlmResponseError(
            "Match response lacks 'matched_words': {}".format(response)
        )
    try:
        category = AttributeCategory(response.get("category", "other"))
    except ValueError:
        raise MalformedVlmResponseError(
            "Unknown category in match response: {}".format(response)
        )
    known = dictionary.words()
    matched = []
    for word in response["matched_words"]:
        word = str(word).strip().lower()
        if word in known:
            matched.append(word)
        else:
            LOG.warning("Dropping matched word '{}' not in dictionary".format(word))
    if not matched:
        return AttributeMatch()
    return AttributeMatch(
        matched_words=matched,
        category=category,
        eliminate_prompt=eliminate_prompt(
            matched, dictionary.subject_class, template
        ),
    )


def match_attributes(user_prompt, dictionary, matcher=None, template=DEFAULT_TEMPLATE):
    """
    Asks the matcher for the dictionary attributes the prompt edits, falling
    back to the keyword matcher when no VLM is reachable.
    """
    if matcher is not None:
        try:
            return _vlm_match(user_prompt, dictionary, matcher, template)
        except VlmUnavailableError as e:
            LOG.info("VLM matcher unavailable, using keywords: {}".format(e))
    return keyword_match(user_prompt, dictionary, template)


def _unit(vector):
    norm = np.linalg.norm(vector)
    if norm < MIN_DIRECTION_NORM:
        raise ZeroDirectionError(
            "Eliminate direction has norm {:.3g}".format(norm)
        )
    return vector / norm


def decompose(p_raw, p_eli, mode=TasMode.POOLED_PER_TOKEN):
    mode = TasMode(mode)
    if p_raw.dim != p_eli.dim:
        raise DimensionMismatchError(
            "Embedding dims differ: {} vs {}".format(p_raw.dim, p_eli.dim)
        )
    if mode is TasMode.POOLED_PER_TOKEN:
        u = _unit(p_eli.pooled)
        tokens = p_raw.tokens - np.outer(p_raw.tokens @ u, u)
    else:
        if p_raw.length != p_eli.length:
            raise DimensionMismatchError(
                "Flattened mode needs equal lengths: {} vs {}".format(
                    p_raw.length, p_eli.length
                )
            )
        u = _unit(p_eli.tokens.reshape(-1))
        flat = p_raw.tokens.reshape(-1)
        tokens = (flat - (flat @ u) * u).reshape(p_raw.tokens.shape)
    if p_raw.encoder_pooled:
        pooled_u = _unit(p_eli.pooled)
        pooled = p_raw.pooled - (p_raw.pooled @ pooled_u) * pooled_u
        return TextEmbedding(tokens=tokens, pooled=pooled, encoder_pooled=True)
    return TextEmbedding(tokens=tokens)


def substitute(
    user_prompt,
    dictionary,
    encoder,
    matcher=None,
    mode=TasMode.POOLED_PER_TOKEN,
    template=DEFAULT_TEMPLATE,
    guidance_scale=1.0,
):
    p_raw = encoder.encode_text(user_prompt)
    match = match_attributes(user_prompt, dictionary, matcher, template)
    if not match:
        LOG.info("No attribute edit found in '{}'".format(user_prompt))
        return Conditioning(p_raw, guidance_scale)
    LOG.info(
        "Suppressing {} attribute(s) {} via '{}'".format(
            match.category.value, match.matched_words, match.eliminate_prompt
        )
    )
    p_eli = encoder.encode_text(match.eliminate_prompt)
    try:
        p_dec = decompose(p_raw, p_eli, mode)
    except ZeroDirectionError as e:
        LOG.warning("Skipping attribute substitution: {}".format(e))
        return Conditioning(p_raw, guidance_scale)
    return Conditioning(p_dec, guidance_scale)
