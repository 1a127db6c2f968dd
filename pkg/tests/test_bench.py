import json
import os
import tempfile
import unittest

import numpy as np

import bench
from adm import PromptRecord
from enums.task import Task
from errors import AnnotationError, InsufficientBackgroundsError
from utils import image_io


def write_corpus(directory, entries):
    """
    `entries` are (name, width, height, boxes); writes blank images and the
    annotation file.
    """
    annotations = []
    for name, width, height, boxes in entries:
        image_io.write_image(os.path.join(directory, name), np.zeros((height, width, 3)))
        annotations.append({"image": name, "boxes": boxes})
    with open(os.path.join(directory, bench.ANNOTATION_FILE), "w") as f:
        json.dump(annotations, f)


def backgrounds(count):
    return [
        bench.BackgroundEntry("bg{:03d}.png".format(i), 300, 300, (10, 10, 100, 80))
        for i in range(count)
    ]


def prompt_sets(subject_ids):
    return {s: bench.default_prompt_sets("teapot") for s in subject_ids}


class TestFilterBackgrounds(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = self.tmp.name

    def tearDown(self):
        self.tmp.cleanup()

    def testFilter_SmallBoxExcluded(self):
        write_corpus(self.dir, [("a.png", 64, 64, [[0, 0, 8, 8]])])
        self.assertEqual(bench.filter_backgrounds(self.dir, 32, 32), [])

    def testFilter_AllPass(self):
        write_corpus(
            self.dir, [("{}.png".format(i), 64, 64, [[4, 4, 40, 40]]) for i in range(4)]
        )
        self.assertEqual(len(bench.filter_backgrounds(self.dir, 32, 32)), 4)

    def testFilter_TenImagesKeepSix(self):
        entries = [("good{}.png".format(i), 40, 40, [[2, 2, 20, 20]]) for i in range(6)]
        entries += [("tiny{}.png".format(i), 24, 24, [[0, 0, 16, 16]]) for i in range(2)]
        entries += [("speck{}.png".format(i), 40, 40, [[0, 0, 8, 8]]) for i in range(2)]
        write_corpus(self.dir, entries)
        kept = bench.filter_backgrounds(self.dir, min_resolution=32, min_box_side=16)
        self.assertEqual(len(kept), 6)
        self.assertTrue(all("good" in entry.image for entry in kept))

    def testFilter_LargestQualifyingBox(self):
        write_corpus(
            self.dir,
            [("a.png", 64, 48, [[0, 0, 20, 20], [10, 5, 30, 40], [40, 40, 40, 40]])],
        )
        (entry,) = bench.filter_backgrounds(self.dir, 32, 16)
        self.assertEqual(entry.box, (10, 5, 30, 40))
        self.assertEqual((entry.width, entry.height), (64, 48))

    def testFilter_BadEntriesAggregated(self):
        write_corpus(self.dir, [("a.png", 64, 64, [[0, 0, 40, 40]])])
        path = os.path.join(self.dir, bench.ANNOTATION_FILE)
        with open(path) as f:
            annotations = json.load(f)
        annotations += [{"image": "missing.png", "boxes": []}, {"image": "a.png", "boxes": [[1, 2]]}]
        with open(path, "w") as f:
            json.dump(annotations, f)
        with self.assertRaises(AnnotationError) as context:
            bench.filter_backgrounds(self.dir, 32, 32)
        self.assertEqual(len(context.exception.failures), 2)
        with self.assertLogs("bench", level="WARNING"):
            kept = bench.filter_backgrounds(self.dir, 32, 32, strict=False)
        self.assertEqual(len(kept), 1)


class TestAssemble(unittest.TestCase):
    def testAssemble_ThreeSubjectsFiveEach(self):
        subjects = ["s0", "s1", "s2"]
        tuples = bench.assemble(subjects, backgrounds(8), 5, prompt_sets(subjects))
        self.assertEqual(len(tuples), 15)
        self.assertEqual(tuples[0].tuple_id, "00000")
        self.assertEqual(tuples[-1].tuple_id, "00014")
        self.assertEqual([t.split for t in tuples[:3]], [Task.IDENTITY, Task.EDITING, Task.IDENTITY])

    def testAssemble_FullScale(self):
        subjects = ["subject{:02d}".format(i) for i in range(30)]
        tuples = bench.assemble(subjects, backgrounds(150), 140, prompt_sets(subjects))
        self.assertEqual(len(tuples), 4200)
        for subject in subjects[:3]:
            drawn = [t.background_path for t in tuples if t.subject_id == subject]
            self.assertEqual(len(set(drawn)), 140)

    def testAssemble_Deterministic(self):
        subjects = ["s0", "s1"]
        first = bench.assemble(subjects, backgrounds(10), 4, prompt_sets(subjects), seed=7)
        second = bench.assemble(subjects, backgrounds(10), 4, prompt_sets(subjects), seed=7)
        self.assertEqual(first, second)

    def testAssemble_SubjectOrderOnlyRenumbers(self):
        pairs = lambda tuples: sorted((t.subject_id, t.background_path) for t in tuples)
        forward = bench.assemble(["s0", "s1"], backgrounds(10), 4, prompt_sets(["s0", "s1"]))
        backward = bench.assemble(["s1", "s0"], backgrounds(10), 4, prompt_sets(["s0", "s1"]))
        self.assertEqual(pairs(forward), pairs(backward))

    def testAssemble_InsufficientBackgrounds(self):
        with self.assertRaises(InsufficientBackgroundsError):
            bench.assemble(["s0"], backgrounds(3), 4, prompt_sets(["s0"]))

    def testBenchTuple_EditingNeedsAttributes(self):
        with self.assertRaises(ValueError):
            bench.BenchTuple(
                tuple_id="00000",
                background_path="bg.png",
                mask_path="masks/00000.png",
                subject_id="s0",
                prompts=[PromptRecord(text="a sks teapot", has_identity_token=True)],
                split=Task.EDITING,
                box=(0, 0, 4, 4),
                image_size=(8, 8),
            )

    def testDefaultPromptSets(self):
        sets = bench.default_prompt_sets("teapot")
        self.assertEqual(len(sets["identity"]), 4)
        self.assertEqual(len(sets["editing"]), 5)
        self.assertIn("a red sks teapot", [p.text for p in sets["editing"]])


class TestBenchmarkFiles(unittest.TestCase):
    def testSaveLoadAndMasks(self):
        subjects = ["s0"]
        tuples = bench.assemble(subjects, backgrounds(4), 2, prompt_sets(subjects))
        with tempfile.TemporaryDirectory() as tmp:
            path = bench.save_benchmark(tuples, os.path.join(tmp, "benchmark.json"))
            loaded = bench.load_benchmark(path)
            bench.materialize_masks(tuples, tmp)
            mask = image_io.read_mask(os.path.join(tmp, tuples[0].mask_path))
        self.assertEqual(loaded, tuples)
        self.assertEqual(mask.shape, (300, 300))
        self.assertEqual(int(mask.sum()), 100 * 80)
        self.assertTrue(mask[10, 10] and mask[89, 109])
        self.assertFalse(mask[90, 10])

    def testExpandSamples(self):
        subjects = ["s0"]
        tuples = bench.assemble(subjects, backgrounds(4), 2, prompt_sets(subjects))
        identity = bench.expand_samples(tuples, Task.IDENTITY)
        editing = bench.expand_samples(tuples, "editing")
        self.assertEqual([s[0] for s in identity], ["00000-0", "00000-1", "00000-2", "00000-3"])
        self.assertEqual(len(editing), 5)
        self.assertEqual(editing[0][0], "00001-0")


if __name__ == "__main__":
    unittest.main()
