import json
import logging
import os

from clients.vlm_client import encode_png_base64
from errors import MalformedVlmResponseError

LOG = logging.getLogger(__name__)

DIMENSIONS = ("color", "shape", "texture")


class JudgeClient:
    """
    Hands (prompt, image) pairs to an external attribute-binding scorer as
    JSONL and reads its 1-5 scores back. No judging happens here.
    """

    def __init__(self, directory):
        self.directory = directory
        os.makedirs(directory, exist_ok=True)

    @property
    def requests_path(self):
        return os.path.join(self.directory, "judge_requests.jsonl")

    def write_requests(self, pairs):
        """
        `pairs` is an iterable of (sample_id, prompt, image).
        """
        count = 0
        with open(self.requests_path, "w") as f:
            for sample_id, prompt, image in pairs:
                f.write(
                    json.dumps(
                        {
                            "id": sample_id,
                            "prompt": prompt,
                            "image": encode_png_base64(image),
                            "dimensions": list(DIMENSIONS),
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
                count += 1
        LOG.info("Wrote {} judge requests to {}".format(count, self.requests_path))
        return self.requests_path

    @staticmethod
    def read_scores(path):
        scores = {}
        with open(path) as f:
            for line_number, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    entry = json.loads(line)
                except ValueError:
                    raise MalformedVlmResponseError(
                        "Line {} of {} is not JSON".format(line_number, path)
                    )
                for dimension in DIMENSIONS:
                    value = entry.get(dimension)
                    if type(value) is not int or not 1 <= value <= 5:
                        raise MalformedVlmResponseError(
                            "Score '{}' for {} must be an integer in 1-5, got {}".format(
                                dimension, entry.get("id"), value
                            )
                        )
                scores[entry["id"]] = {d: entry[d] for d in DIMENSIONS}
        return scores
