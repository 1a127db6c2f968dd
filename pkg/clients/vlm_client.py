import base64
import io
import json
import logging
import os
import uuid

import numpy as np
import requests
from PIL import Image

from backbones.types import as_image
from enums.attribute_category import AttributeCategory
from errors import MalformedVlmResponseError, VlmUnavailableError

LOG = logging.getLogger(__name__)

ENDPOINT_ENV = "SUBJECT_INPAINT_VLM_ENDPOINT"
API_KEY_ENV = "SUBJECT_INPAINT_VLM_API_KEY"

DESCRIBE = "describe_attributes"
COMPOSE = "compose_prompts"
MATCH = "match_attributes"


def encode_png_base64(image):
    pixels = np.clip(np.round(as_image(image) * 255.0), 0, 255).astype(np.uint8)
    buffered = io.BytesIO()
    Image.fromarray(pixels).save(buffered, format="PNG")
    return base64.b64encode(buffered.getvalue()).decode("utf-8")


class VlmClient:
    """
    JSON request/response client for a vision-language model service.

    Every request is posted as {"id", "kind", "payload"}; the service answers
    with {"id", "result"} and the id must echo the request's.
    """

    TIMEOUT = 60

    def __init__(self, endpoint=None, api_key=None, model="gpt-4o"):
        self.endpoint = endpoint or os.environ.get(ENDPOINT_ENV)
        self.api_key = api_key or os.environ.get(API_KEY_ENV)
        self.model = model
        if not self.endpoint:
            raise VlmUnavailableError(
                "No VLM endpoint configured (set {})".format(ENDPOINT_ENV)
            )

    @property
    def model_id(self):
        return self.model

    @property
    def headers(self):
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = "Bearer {}".format(self.api_key)
        return headers

    def describe_attributes(self, images, subject_class):
        payload = {
            "subject_class": subject_class,
            "categories": [
                c.value for c in AttributeCategory.dictionary_categories()
            ],
            "images": [encode_png_base64(image) for image in images],
        }
        return self._send_request(DESCRIBE, payload)

    def compose_prompts(self, dictionary, n):
        return self._send_request(COMPOSE, {"dictionary": dictionary, "n": n})

    def match_attributes(self, prompt, dictionary):
        return self._send_request(
            MATCH, {"prompt": prompt, "dictionary": dictionary}
        )

    def _send_request(self, kind, payload):
        request_id = uuid.uuid4().hex
        body = {"id": request_id, "kind": kind, "model": self.model,
                "payload": payload}
        LOG.debug("Querying VLM {} for {} ({})".format(
            self.endpoint, kind, request_id))
        try:
            resp = requests.post(
                self.endpoint,
                data=json.dumps(body),
                headers=self.headers,
                timeout=self.TIMEOUT,
            )
        except requests.RequestException as e:
            raise VlmUnavailableError(
                "VLM request to {} failed: {}".format(self.endpoint, e)
            )
        if resp.status_code != 200:
            raise VlmUnavailableError(
                "ERROR, {status_code} code received from {url}: {resp_text}".format(
                    status_code=resp.status_code,
                    url=self.endpoint,
                    resp_text=resp.text,
                )
            )
        try:
            data = resp.json()
        except ValueError:
            raise MalformedVlmResponseError(
                "VLM returned non-JSON body: {}".format(resp.text[:200])
            )
        if not isinstance(data, dict) or data.get("id") != request_id:
            raise MalformedVlmResponseError(
                "VLM response does not echo request id {}".format(request_id)
            )
        return data.get("result")


class RecordedVlmClient:
    """
    Replays responses from a JSON fixture keyed by request kind. A list value
    is consumed in order and its last entry repeats.
    """

    def __init__(self, fixture_path):
        with open(fixture_path) as f:
            self.fixture = json.load(f)
        self.model = self.fixture.get("model", "recorded")
        self._calls = {}

    @property
    def model_id(self):
        return self.model

    def _replay(self, kind):
        if kind not in self.fixture:
            raise VlmUnavailableError(
                "Fixture has no recorded response for {}".format(kind)
            )
        recorded = self.fixture[kind]
        if not isinstance(recorded, list):
            return recorded
        index = self._calls.get(kind, 0)
        self._calls[kind] = index + 1
        return recorded[min(index, len(recorded) - 1)]

    def describe_attributes(self, images, subject_class):
        return self._replay(DESCRIBE)

    def compose_prompts(self, dictionary, n):
        return self._replay(COMPOSE)

    def match_attributes(self, prompt, dictionary):
        return self._replay(MATCH)


class MockVlmClient:
    """
    Offline stand-in that derives attributes from pixel statistics. It only
    answers attribute description; prompt composition and matching raise
    VlmUnavailableError so callers use their deterministic fallbacks.
    """

    PALETTE = {
        "red": (0.8, 0.1, 0.1),
        "orange": (0.9, 0.5, 0.1),
        "yellow": (0.9, 0.85, 0.2),
        "green": (0.2, 0.6, 0.2),
        "blue": (0.15, 0.3, 0.8),
        "purple": (0.5, 0.2, 0.6),
        "pink": (0.95, 0.6, 0.7),
        "brown": (0.45, 0.3, 0.15),
        "black": (0.05, 0.05, 0.05),
        "white": (0.95, 0.95, 0.95),
        "gray": (0.5, 0.5, 0.5),
    }
    MATERIALS = ("clay", "ceramic", "plastic", "metal", "fabric", "wood")
    TEXTURES = ("smooth", "glossy", "matte", "rough")
    SHAPES = ("round", "tall", "flat", "curved")

    model = "mock"

    @property
    def model_id(self):
        return self.model

    def describe_attributes(self, images, subject_class):
        """
        Two words per category: the two palette colours nearest the mean
        colour and two neighbouring options picked from pixel statistics.
        """
        stack = np.stack([as_image(image)[:, :, :3].mean(axis=(0, 1))
                          for image in images])
        mean_colour = stack.mean(axis=0)
        colours = sorted(
            self.PALETTE,
            key=lambda name: float(
                np.sum((np.asarray(self.PALETTE[name]) - mean_colour) ** 2)
            ),
        )
        spread = float(np.mean([as_image(image).std() for image in images]))
        brightness = float(mean_colour.mean())

        def pick(options, value):
            index = int(value * 997) % len(options)
            return [options[index], options[(index + 1) % len(options)]]

        return {
            "categories": {
                "color": colours[:2],
                "material": pick(self.MATERIALS, brightness),
                "texture": pick(self.TEXTURES, spread),
                "shape": pick(self.SHAPES, brightness + spread),
                "accessory": [],
            }
        }

    def compose_prompts(self, dictionary, n):
        raise VlmUnavailableError("The mock VLM does not compose prompts")

    def match_attributes(self, prompt, dictionary):
        raise VlmUnavailableError("The mock VLM does not match attributes")


def load_vlm_client(kind, endpoint=None, fixture=None):
    if kind == "mock":
        return MockVlmClient()
    if kind == "recorded":
        return RecordedVlmClient(fixture)
    if kind == "http":
        return VlmClient(endpoint=endpoint)
    raise VlmUnavailableError("Unknown VLM client '{}'".format(kind))
