import os
import tempfile
import unittest

import numpy as np

import training
from adm import (
    PromptRecord,
    RegularizationSample,
    RegularizationSet,
    compose_prompts,
    extract_dictionary,
    synthesize_regularization,
)
from backbones.schedule import SamplerSchedule
from backbones.toy import ToyBackbone
from backbones.types import Conditioning
from clients.vlm_client import MockVlmClient
from enums.sample_source import SampleSource
from errors import EmptyBatchError, IdentityTokenLeakError
from utils import image_io


def toy(seed=0):
    return ToyBackbone(schedule=SamplerSchedule.linear(T=50), working_resolution=16, seed=seed)


def subject_sample(value=1.0, size=16):
    return training.TrainSample(
        image=np.full((size, size, 3), value),
        mask=np.ones((size, size)),
        prompt=training.subject_prompt("teapot"),
        source=SampleSource.SUBJECT,
    )


def regularization_set(count=2, size=16):
    rng = np.random.default_rng(3)
    samples = [
        RegularizationSample(
            image=rng.random((size, size, 3)),
            prompt=PromptRecord(text="a brown teapot", attributes_used=[("color", "brown")]),
            mask=np.ones((size, size), dtype=bool),
            seed=i,
        )
        for i in range(count)
    ]
    return RegularizationSet(samples=samples, target_count=count)


class TestLossRe(unittest.TestCase):
    def testLossRe_HandComputed(self):
        weights = training.LossWeights(tau1=1.5, tau2=0.7)
        loss = training.loss_re(
            np.full((2, 2, 1), 2.0), np.zeros((2, 2, 1)), [[1, 0], [0, 0]], weights
        )
        self.assertAlmostEqual(float(loss), 3.6, places=12)

    def testLossRe_FullMaskIsMse(self):
        rng = np.random.default_rng(0)
        predicted = rng.standard_normal((4, 4, 3))
        true = rng.standard_normal((4, 4, 3))
        loss = training.loss_re(
            predicted, true, np.ones((4, 4)), training.LossWeights(tau1=1.0)
        )
        self.assertAlmostEqual(float(loss), float(np.mean((predicted - true) ** 2)), places=12)

    def testLossRe_PerfectPrediction(self):
        noise = np.random.default_rng(1).standard_normal((4, 4, 3))
        loss = training.loss_re(noise, noise, np.zeros((4, 4)), training.LossWeights())
        self.assertEqual(float(loss), 0.0)

    def testLossReGrad_MatchesFiniteDifferences(self):
        rng = np.random.default_rng(2)
        predicted = rng.standard_normal((3, 3, 2))
        true = rng.standard_normal((3, 3, 2))
        mask = rng.random((3, 3)) > 0.5
        weights = training.LossWeights()
        gradient = training.loss_re_grad(predicted, true, mask, weights)
        h = 1e-6
        for index in np.ndindex(predicted.shape):
            up = predicted.copy()
            down = predicted.copy()
            up[index] += h
            down[index] -= h
            numeric = (
                float(training.loss_re(up, true, mask, weights))
                - float(training.loss_re(down, true, mask, weights))
            ) / (2 * h)
            self.assertAlmostEqual(gradient[index], numeric, places=6)

    def testLossWeights_Sweepable(self):
        for beta in (0.2, 0.4, 1.0):
            self.assertEqual(training.LossWeights(beta=beta).beta, beta)
        with self.assertRaises(ValueError):
            training.LossWeights(tau1=-1.0)


class TestLossFinal(unittest.TestCase):
    def testLossFinal_ZeroBetaIsSubjectOnly(self):
        model = toy()
        subjects = [subject_sample(0.3)]
        reg = training.regularization_samples(regularization_set())
        weights = training.LossWeights(beta=0.0)
        with_reg = training.loss_final(subjects, reg, weights, model, noise_seed=5)
        without = training.loss_final(subjects, None, weights, model, noise_seed=5)
        self.assertEqual(float(with_reg), float(without))

    def testLossFinal_AddsWeightedRegularization(self):
        model = toy()
        subjects = [subject_sample(0.3)]
        reg = training.regularization_samples(regularization_set())
        zero = training.loss_final(subjects, reg, training.LossWeights(beta=0.0), model, 5)
        one = training.loss_final(subjects, reg, training.LossWeights(beta=1.0), model, 5)
        self.assertGreater(float(one), float(zero))

    def testLossFinal_EmptyBatches(self):
        model = toy()
        with self.assertRaises(EmptyBatchError):
            training.loss_final([], None, training.LossWeights(), model, 0)
        with self.assertRaises(EmptyBatchError):
            training.loss_final([subject_sample()], [], training.LossWeights(), model, 0)


class TestTrainSample(unittest.TestCase):
    def testTrainSample_SubjectNeedsToken(self):
        with self.assertRaises(ValueError):
            training.TrainSample(
                image=np.zeros((4, 4, 3)),
                mask=np.ones((4, 4)),
                prompt=PromptRecord(text="a teapot"),
                source="subject",
            )

    def testTrainSample_RegularizationRejectsToken(self):
        with self.assertRaises(IdentityTokenLeakError):
            training.TrainSample(
                image=np.zeros((4, 4, 3)),
                mask=np.ones((4, 4)),
                prompt=training.subject_prompt("teapot"),
                source="regularization",
            )

    def testSubjectPrompt(self):
        prompt = training.subject_prompt("teapot")
        self.assertEqual(prompt.text, "a sks teapot")
        self.assertTrue(prompt.has_identity_token)

    def testLoadSubjectDir_MasksAndFallback(self):
        with tempfile.TemporaryDirectory() as tmp:
            os.makedirs(os.path.join(tmp, "masks"))
            for name in ("a.png", "b.png"):
                image_io.write_image(os.path.join(tmp, name), np.full((8, 8, 3), 0.5))
            mask = np.zeros((8, 8), dtype=bool)
            mask[2:6, 2:6] = True
            image_io.write_mask(os.path.join(tmp, "masks", "a.png"), mask)
            with self.assertLogs("training", level="WARNING"):
                samples = training.load_subject_dir(tmp, 8, "teapot")
        self.assertEqual(len(samples), 2)
        np.testing.assert_array_equal(samples[0].mask, mask)
        self.assertTrue(samples[1].mask.all())

    def testLoadSubjectDir_Empty(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(EmptyBatchError):
                training.load_subject_dir(tmp, 8, "teapot")


class TestFinetune(unittest.TestCase):
    def run_finetune(self, steps, reg=None, lr=0.02, seed=0, out_dir=None):
        backbone = toy()
        checkpoint = training.finetune(
            subjects=[subject_sample(1.0)],
            reg=reg,
            adapters=training.AdapterConfig(rank=4),
            weights=training.LossWeights(),
            steps=steps,
            lr=lr,
            seed=seed,
            backbone=backbone,
            out_dir=out_dir,
        )
        return checkpoint, backbone

    def testFinetune_ZeroStepsKeepsInitialization(self):
        checkpoint, _ = self.run_finetune(0)
        fresh = toy()
        fresh.add_adapters(training.AdapterConfig(rank=4))
        self.assertEqual(checkpoint.loss_log, [])
        self.assertEqual(sorted(checkpoint.adapter_state), sorted(fresh.adapter_state()))
        for name, value in fresh.adapter_state().items():
            np.testing.assert_array_equal(checkpoint.adapter_state[name], value)

    def testFinetune_ReducesSmoothedLoss(self):
        checkpoint, _ = self.run_finetune(200)
        smoothed = training.smooth_losses(checkpoint.loss_log)
        self.assertEqual(len(smoothed), 200)
        self.assertLess(smoothed[-1], 0.5 * smoothed[19])

    def testFinetune_ReducesSmoothedLossWithRegularization(self):
        image = np.ones((16, 16, 3))
        dictionary = extract_dictionary([image], "teapot", MockVlmClient())
        prompts = compose_prompts(dictionary, 30, rng_seed=0)
        reg = synthesize_regularization(prompts, toy(), seed=0)
        self.assertEqual(len(reg.samples), 30)
        for seed in (0, 1):
            checkpoint, backbone = self.run_finetune(200, reg=reg, lr=1e-3, seed=seed)
            smoothed = training.smooth_losses(checkpoint.loss_log)
            self.assertLess(smoothed[-1], 0.5 * smoothed[19], msg=seed)
            self.assertEqual(backbone.base_weights_hash(), toy().base_weights_hash())

    def testFinetune_Deterministic(self):
        first, _ = self.run_finetune(5, reg=regularization_set())
        second, _ = self.run_finetune(5, reg=regularization_set())
        self.assertEqual(first.loss_log, second.loss_log)
        self.assertTrue(first.metadata["regularization"])

    def testFinetune_BaseWeightsUntouched(self):
        checkpoint, backbone = self.run_finetune(10)
        self.assertEqual(checkpoint.metadata["base_weights_hash"], toy().base_weights_hash())
        self.assertEqual(backbone.base_weights_hash(), toy().base_weights_hash())
        self.assertFalse(checkpoint.metadata["regularization"])

    def testFinetune_NoSubjects(self):
        with self.assertRaises(EmptyBatchError):
            training.finetune(
                [], None, training.AdapterConfig(), training.LossWeights(), 1, 0.01, 0, toy()
            )

    def testCheckpoint_SaveLoadApply(self):
        with tempfile.TemporaryDirectory() as tmp:
            checkpoint, trained = self.run_finetune(10, out_dir=tmp)
            self.assertTrue(os.path.exists(os.path.join(tmp, "metadata.json")))
            self.assertTrue(os.path.exists(os.path.join(tmp, "loss_log.json")))
            loaded = training.Checkpoint.load(tmp)
        self.assertEqual(loaded.loss_log, checkpoint.loss_log)
        self.assertEqual(loaded.adapter_config, training.AdapterConfig(rank=4))
        restored = loaded.apply(toy())
        cond = Conditioning(trained.encode_text("a sks teapot"))
        z = np.random.default_rng(4).standard_normal((16, 16, 3))
        np.testing.assert_allclose(
            restored.predict_noise(z, cond, 10), trained.predict_noise(z, cond, 10), atol=1e-5
        )


class TestSmoothLosses(unittest.TestCase):
    def testSmoothLosses_RunningWindow(self):
        log = [{"step": i, "loss": float(i)} for i in range(5)]
        self.assertEqual(training.smooth_losses(log, window=2), [0.0, 0.5, 1.5, 2.5, 3.5])


if __name__ == "__main__":
    unittest.main()
