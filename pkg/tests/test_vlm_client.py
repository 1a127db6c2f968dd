import json
import os
import unittest
from unittest import mock

import numpy as np
import requests

from clients.vlm_client import (
    DESCRIBE,
    MockVlmClient,
    RecordedVlmClient,
    VlmClient,
    load_vlm_client,
)
from errors import MalformedVlmResponseError, VlmUnavailableError

FIXTURE = os.path.join(os.path.dirname(__file__), "fixtures", "teapot_vlm.json")


def echo_response(result, status_code=200):
    def post(url, data, headers, timeout):
        response = mock.Mock(status_code=status_code, text="body")
        response.json.return_value = {"id": json.loads(data)["id"], "result": result}
        return response

    return post


class TestVlmClient(unittest.TestCase):
    def setUp(self):
        self.client = VlmClient(endpoint="http://vlm.local/v1", api_key="secret")

    @mock.patch("clients.vlm_client.requests.post")
    def testDescribeAttributes_PostsImagesAndReturnsResult(self, post):
        post.side_effect = echo_response({"categories": {"color": ["brown"]}})
        result = self.client.describe_attributes([np.zeros((4, 4, 3))], "teapot")
        self.assertEqual(result, {"categories": {"color": ["brown"]}})
        _, kwargs = post.call_args
        body = json.loads(kwargs["data"])
        self.assertEqual(body["kind"], DESCRIBE)
        self.assertEqual(body["payload"]["subject_class"], "teapot")
        self.assertEqual(len(body["payload"]["images"]), 1)
        self.assertEqual(kwargs["headers"]["Authorization"], "Bearer secret")

    @mock.patch("clients.vlm_client.requests.post")
    def testSendRequest_WrongIdIsMalformed(self, post):
        response = mock.Mock(status_code=200)
        response.json.return_value = {"id": "someone-else", "result": {}}
        post.return_value = response
        with self.assertRaises(MalformedVlmResponseError):
            self.client.match_attributes("a red sks teapot", {})

    @mock.patch("clients.vlm_client.requests.post")
    def testSendRequest_NonJsonIsMalformed(self, post):
        response = mock.Mock(status_code=200, text="<html>")
        response.json.side_effect = ValueError("no json")
        post.return_value = response
        with self.assertRaises(MalformedVlmResponseError):
            self.client.compose_prompts({}, 3)

    @mock.patch("clients.vlm_client.requests.post")
    def testSendRequest_ErrorStatusIsUnavailable(self, post):
        post.side_effect = echo_response({}, status_code=503)
        with self.assertRaises(VlmUnavailableError):
            self.client.compose_prompts({}, 3)

    @mock.patch("clients.vlm_client.requests.post")
    def testSendRequest_ConnectionErrorIsUnavailable(self, post):
        post.side_effect = requests.ConnectionError("refused")
        with self.assertRaises(VlmUnavailableError):
            self.client.match_attributes("a sks teapot", {})

    def testVlmClient_NeedsEndpoint(self):
        with mock.patch.dict(os.environ, {}, clear=True):
            with self.assertRaises(VlmUnavailableError):
                VlmClient()


class TestOfflineClients(unittest.TestCase):
    def testRecorded_ReplaysFixture(self):
        client = RecordedVlmClient(FIXTURE)
        self.assertEqual(client.model_id, "recorded-teapot")
        self.assertEqual(client.match_attributes("a red sks teapot", {})["matched_words"], ["brown"])
        with self.assertRaises(VlmUnavailableError):
            client.compose_prompts({}, 3)

    def testMock_DescribesNearestColours(self):
        image = np.ones((8, 8, 3)) * np.array([0.45, 0.3, 0.15])
        result = MockVlmClient().describe_attributes([image], "teapot")
        self.assertEqual(result["categories"]["color"][0], "brown")
        for name in ("color", "material", "texture", "shape"):
            self.assertEqual(len(set(result["categories"][name])), 2)

    def testMock_DoesNotMatch(self):
        with self.assertRaises(VlmUnavailableError):
            MockVlmClient().match_attributes("a red sks teapot", {})

    def testLoadVlmClient(self):
        self.assertIsInstance(load_vlm_client("mock"), MockVlmClient)
        self.assertIsInstance(load_vlm_client("recorded", fixture=FIXTURE), RecordedVlmClient)
        with self.assertRaises(VlmUnavailableError):
            load_vlm_client("carrier-pigeon")


if __name__ == "__main__":
    unittest.main()
