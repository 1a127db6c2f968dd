import logging
import unittest
from unittest import mock

import numpy as np

from adm import AttributeDictionary
from backbones.toy import ToyBackbone
from backbones.types import TextEmbedding
from enums.attribute_category import AttributeCategory
from enums.tas_mode import TasMode
from errors import (
    DimensionMismatchError,
    MalformedVlmResponseError,
    VlmUnavailableError,
    ZeroDirectionError,
)
import tas


def teapot_dictionary(**categories):
    return AttributeDictionary(subject_class="teapot", categories=categories)


def gram_schmidt(p_raw, p_eli):
    """Removes p_eli from p_raw one coordinate at a time."""
    u = [x / np.sqrt(sum(y * y for y in p_eli)) for x in p_eli]
    dot = sum(a * b for a, b in zip(p_raw, u))
    return np.array([a - dot * b for a, b in zip(p_raw, u)])


class TestKeywordMatch(unittest.TestCase):
    def testKeywordMatch_ColorEdit(self):
        match = tas.keyword_match("a red [sks] teapot", teapot_dictionary(color=["brown"]))
        self.assertEqual(match.matched_words, ["brown"])
        self.assertIs(match.category, AttributeCategory.COLOR)
        self.assertEqual(match.eliminate_prompt, "a brown teapot")

    def testKeywordMatch_NoEdit(self):
        match = tas.keyword_match(
            "a [sks] teapot on a table",
            teapot_dictionary(color=["brown"], material=["clay"]),
        )
        self.assertFalse(match)
        self.assertEqual(match.matched_words, [])

    def testKeywordMatch_MaterialEdit(self):
        match = tas.keyword_match("a glass [sks] teapot", teapot_dictionary(material=["clay"]))
        self.assertEqual(match.matched_words, ["clay"])
        self.assertIs(match.category, AttributeCategory.MATERIAL)

    def testKeywordMatch_CategoryOrderBreaksTies(self):
        match = tas.keyword_match(
            "a red glass sks teapot",
            teapot_dictionary(color=["brown"], material=["clay"]),
        )
        self.assertIs(match.category, AttributeCategory.COLOR)

    def testKeywordMatch_OwnWordIsNotAnEdit(self):
        match = tas.keyword_match(
            "a brown sks teapot", teapot_dictionary(color=["brown"])
        )
        self.assertFalse(match)

    def testKeywordMatch_WholeWordsOnly(self):
        # "redwood" must not count as the colour "red".
        match = tas.keyword_match(
            "a sks teapot on a redwood table", teapot_dictionary(color=["brown"])
        )
        self.assertFalse(match)

    def testKeywordMatch_MultiWordKeyword(self):
        match = tas.keyword_match(
            "a cast iron sks teapot", teapot_dictionary(material=["clay"])
        )
        self.assertEqual(match.matched_words, ["clay"])
        self.assertIs(match.category, AttributeCategory.MATERIAL)
        self.assertFalse(
            tas.keyword_match("an ironic cast sks teapot", teapot_dictionary(material=["clay"]))
        )

    def testKeywordMatch_MultiWordOwnPhraseIsNotSuppressed(self):
        match = tas.keyword_match(
            "a light brown sks teapot", teapot_dictionary(color=["light brown"])
        )
        self.assertFalse(match)
        match = tas.keyword_match(
            "a blue sks teapot", teapot_dictionary(color=["light brown"])
        )
        self.assertEqual(match.eliminate_prompt, "a light brown teapot")

    def testEliminatePrompt_CustomTemplate(self):
        self.assertEqual(
            tas.eliminate_prompt(["brown", "clay"], "teapot", "a photo of a {attributes} [class]"),
            "a photo of a brown clay teapot",
        )


class TestMatchAttributes(unittest.TestCase):
    def testMatchAttributes_UsesMatcher(self):
        matcher = mock.Mock()
        matcher.match_attributes.return_value = {
            "category": "material",
            "matched_words": ["Clay", "velvet"],
        }
        dictionary = teapot_dictionary(material=["clay"])
        with self.assertLogs("tas", level=logging.WARNING):
            match = tas.match_attributes("a glass sks teapot", dictionary, matcher)
        self.assertEqual(match.matched_words, ["clay"])
        self.assertIs(match.category, AttributeCategory.MATERIAL)

    def testMatchAttributes_FallsBackWhenUnavailable(self):
        matcher = mock.Mock()
        matcher.match_attributes.side_effect = VlmUnavailableError("offline")
        match = tas.match_attributes(
            "a red sks teapot", teapot_dictionary(color=["brown"]), matcher
        )
        self.assertEqual(match.matched_words, ["brown"])

    def testMatchAttributes_MalformedResponse(self):
        matcher = mock.Mock()
        matcher.match_attributes.return_value = {"words": []}
        with self.assertRaises(MalformedVlmResponseError):
            tas.match_attributes("a red sks teapot", teapot_dictionary(color=["brown"]), matcher)


class TestDecompose(unittest.TestCase):
    def testDecompose_OrthogonalUnchanged(self):
        p_raw = TextEmbedding(tokens=[[1.0, 0.0, 0.0, 0.0]])
        p_eli = TextEmbedding(tokens=[[0.0, 1.0, 0.0, 0.0]])
        result = tas.decompose(p_raw, p_eli)
        np.testing.assert_array_equal(result.tokens, p_raw.tokens)

    def testDecompose_ParallelAnnihilated(self):
        direction = np.array([[0.5, -1.0, 2.0, 0.25]])
        result = tas.decompose(TextEmbedding(tokens=3 * direction), TextEmbedding(tokens=direction))
        np.testing.assert_allclose(result.tokens, np.zeros((1, 4)), atol=1e-12)

    def testDecompose_MatchesGramSchmidt(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            p_raw = rng.standard_normal(16)
            p_eli = rng.standard_normal(16)
            result = tas.decompose(
                TextEmbedding(tokens=[p_raw]), TextEmbedding(tokens=[p_eli])
            ).tokens[0]
            tolerance = 1e-9 * np.linalg.norm(p_raw) * np.linalg.norm(p_eli)
            self.assertLessEqual(abs(result @ p_eli), tolerance)
            np.testing.assert_allclose(result, gram_schmidt(p_raw, p_eli), atol=1e-12)

    def testDecompose_ThousandSeededPairs(self):
        rng = np.random.default_rng(20)
        for _ in range(1000):
            p_raw = rng.standard_normal(16)
            p_eli = rng.standard_normal(16)
            result = tas.decompose(
                TextEmbedding(tokens=[p_raw]), TextEmbedding(tokens=[p_eli])
            ).tokens[0]
            u = p_eli / np.linalg.norm(p_eli)
            self.assertLessEqual(abs(result @ u), 1e-9 * np.linalg.norm(p_raw))
            np.testing.assert_allclose(result, gram_schmidt(p_raw, p_eli), atol=1e-9)

    def testDecompose_Idempotent(self):
        rng = np.random.default_rng(21)
        for mode in TasMode:
            p_raw = TextEmbedding(tokens=rng.standard_normal((3, 8)))
            p_eli = TextEmbedding(tokens=rng.standard_normal((3, 8)))
            once = tas.decompose(p_raw, p_eli, mode)
            twice = tas.decompose(once, p_eli, mode)
            np.testing.assert_allclose(twice.tokens, once.tokens, atol=1e-12)

    def testDecompose_LinearInRawEmbedding(self):
        rng = np.random.default_rng(22)
        x, y = rng.standard_normal((3, 8)), rng.standard_normal((3, 8))
        p_eli = TextEmbedding(tokens=rng.standard_normal((3, 8)))
        for mode in TasMode:
            combined = tas.decompose(TextEmbedding(tokens=2.0 * x - 0.5 * y), p_eli, mode)
            parts = [tas.decompose(TextEmbedding(tokens=v), p_eli, mode).tokens for v in (x, y)]
            np.testing.assert_allclose(combined.tokens, 2.0 * parts[0] - 0.5 * parts[1], atol=1e-12)

    def testDecompose_NeverGrowsNorm(self):
        rng = np.random.default_rng(23)
        for _ in range(100):
            p_raw = TextEmbedding(tokens=rng.standard_normal((4, 8)))
            p_eli = TextEmbedding(tokens=rng.standard_normal((2, 8)))
            result = tas.decompose(p_raw, p_eli)
            self.assertTrue(
                np.all(
                    np.linalg.norm(result.tokens, axis=1)
                    <= np.linalg.norm(p_raw.tokens, axis=1) + 1e-12
                )
            )

    def testDecompose_PooledPerTokenRemovesPooledDirection(self):
        rng = np.random.default_rng(12)
        p_raw = TextEmbedding(tokens=rng.standard_normal((5, 8)))
        p_eli = TextEmbedding(tokens=rng.standard_normal((3, 8)))
        result = tas.decompose(p_raw, p_eli, TasMode.POOLED_PER_TOKEN)
        np.testing.assert_allclose(result.tokens @ p_eli.pooled, np.zeros(5), atol=1e-9)
        self.assertEqual(result.tokens.shape, (5, 8))

    def testDecompose_FlattenedNeedsEqualLengths(self):
        rng = np.random.default_rng(13)
        p_raw = TextEmbedding(tokens=rng.standard_normal((5, 8)))
        p_eli = TextEmbedding(tokens=rng.standard_normal((3, 8)))
        with self.assertRaises(DimensionMismatchError):
            tas.decompose(p_raw, p_eli, TasMode.FLATTENED)

    def testDecompose_Flattened(self):
        rng = np.random.default_rng(14)
        p_raw = TextEmbedding(tokens=rng.standard_normal((3, 8)))
        p_eli = TextEmbedding(tokens=rng.standard_normal((3, 8)))
        result = tas.decompose(p_raw, p_eli, "flattened")
        self.assertAlmostEqual(
            float(result.tokens.reshape(-1) @ p_eli.tokens.reshape(-1)), 0.0, places=9
        )

    def testDecompose_EncoderPooledProjected(self):
        rng = np.random.default_rng(15)
        p_raw = TextEmbedding(
            tokens=rng.standard_normal((2, 4)), pooled=rng.standard_normal(4), encoder_pooled=True
        )
        p_eli = TextEmbedding(
            tokens=rng.standard_normal((2, 4)), pooled=rng.standard_normal(4), encoder_pooled=True
        )
        result = tas.decompose(p_raw, p_eli)
        self.assertTrue(result.encoder_pooled)
        self.assertAlmostEqual(float(result.pooled @ p_eli.pooled), 0.0, places=9)

    def testDecompose_ZeroDirection(self):
        with self.assertRaises(ZeroDirectionError):
            tas.decompose(TextEmbedding(tokens=[[1.0, 2.0]]), TextEmbedding(tokens=[[0.0, 0.0]]))

    def testDecompose_DimMismatch(self):
        with self.assertRaises(DimensionMismatchError):
            tas.decompose(TextEmbedding(tokens=[[1.0, 2.0]]), TextEmbedding(tokens=[[1.0, 2.0, 3.0]]))


class TestSubstitute(unittest.TestCase):
    def setUp(self):
        self.encoder = ToyBackbone()
        self.dictionary = teapot_dictionary(color=["brown"], material=["clay"])

    def testSubstitute_NoMatchKeepsRawEmbedding(self):
        prompt = "a sks teapot on a table"
        cond = tas.substitute(prompt, self.dictionary, self.encoder, guidance_scale=4.0)
        np.testing.assert_array_equal(
            cond.embedding.tokens, self.encoder.encode_text(prompt).tokens
        )
        self.assertEqual(cond.guidance_scale, 4.0)

    def testSubstitute_MatchIsOrthogonalToEliminatePrompt(self):
        cond = tas.substitute("a red sks teapot", self.dictionary, self.encoder)
        p_eli = self.encoder.encode_text("a brown teapot")
        self.assertAlmostEqual(float(cond.embedding.pooled @ p_eli.pooled), 0.0, places=9)

    def testSubstitute_ZeroDirectionFallsBack(self):
        prompt = "a red sks teapot"
        with mock.patch("tas.decompose", side_effect=ZeroDirectionError("flat")):
            with self.assertLogs("tas", level=logging.WARNING):
                cond = tas.substitute(prompt, self.dictionary, self.encoder)
        np.testing.assert_array_equal(
            cond.embedding.tokens, self.encoder.encode_text(prompt).tokens
        )


if __name__ == "__main__":
    unittest.main()
