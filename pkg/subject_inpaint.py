# -*- coding: utf-8 -*-
#!/usr/bin/env python3

import json
import logging
import os
import shutil
import sys

from adm import (
    AttributeDictionary,
    CenteredBoxMaskPolicy,
    FullMaskPolicy,
    RegularizationSet,
    compose_prompts,
    extract_dictionary,
    synthesize_regularization,
)
from backbones import load_backbone
from backbones.types import Conditioning
from bench import (
    assemble,
    default_prompt_sets,
    expand_samples,
    filter_backgrounds,
    load_benchmark,
    materialize_masks,
    save_benchmark,
)
from clients.judge_client import JudgeClient
from clients.vlm_client import load_vlm_client
from config import load_config, parse_scalar
from dif import InpaintRequest, inpaint, inpaint_multi
from embedders import load_embedder
from enums.exit_code import ExitCode
from enums.task import Task
from errors import ConfigError, PipelineError
from evaluation import evaluate_run, load_images
from runs import create_run
from tas import substitute
from training import Checkpoint, finetune, load_subject_dir, smooth_losses
from utils import image_io
from utils.argparser import SubjectInpaintArgumentParser

LOG = logging.getLogger(__name__)
log_formatter = logging.Formatter(
    "%(asctime)s - %(process)s - %(levelname)s - %(message)s"
)
sh = logging.StreamHandler()
sh.setFormatter(log_formatter)
logging.getLogger().addHandler(sh)

DICTIONARY_FILE = "dictionary.json"


def _vlm(config):
    return load_vlm_client(
        config.adm.vlm,
        endpoint=config.adm.vlm_endpoint or None,
        fixture=config.adm.vlm_fixture or None,
    )


def _backbone(config):
    return load_backbone(
        config.backbone,
        schedule=config.sampler_schedule(),
        seed=config.seed,
        working_resolution=config.resolution,
    )


def _mask_policy(config):
    if config.adm.mask_policy == "full":
        return FullMaskPolicy()
    return CenteredBoxMaskPolicy(config.adm.mask_min_area, config.adm.mask_max_area)


def build_regularization(config, subject_dir, out_dir, backbone):
    """
    Dictionary, prompts and images for one subject; the dictionary is saved
    next to the regularization manifest.
    """
    images = [
        image_io.read_image(path, size=config.resolution)
        for path in image_io.list_images(subject_dir)
    ]
    vlm = _vlm(config)
    dictionary = extract_dictionary(images, config.adm.subject_class, vlm)
    prompts = compose_prompts(
        dictionary,
        config.adm.num_prompts,
        vlm=vlm,
        rng_seed=config.seed,
        identity_token=config.training.identity_token,
    )
    reg_set = synthesize_regularization(
        prompts,
        backbone,
        mask_source=_mask_policy(config),
        seed=config.seed,
        out_dir=out_dir,
        provenance=dict(dictionary.provenance, backbone=backbone.name),
        target_count=config.adm.num_prompts,
    )
    dictionary.save(os.path.join(out_dir, DICTIONARY_FILE))
    return dictionary, reg_set


def cmd_adm(config, args, run):
    if not config.ablation.adm:
        print("Regularization disabled, nothing written")
        return None
    out_dir = run.artifact("regularization")
    _, reg_set = build_regularization(config, args.subject_dir, out_dir, _backbone(config))
    print("Wrote {} regularization samples to {}".format(len(reg_set.samples), out_dir))
    return out_dir


def cmd_finetune(config, args, run):
    backbone = _backbone(config)
    subjects = load_subject_dir(
        args.subject_dir,
        backbone.working_resolution,
        config.adm.subject_class,
        config.training.identity_token,
    )
    if len(subjects) == 1:
        LOG.info("Single-image training")
    checkpoint_dir = run.artifact("checkpoint")
    reg_set = None
    dictionary_path = None
    if config.ablation.adm:
        if args.reg_dir:
            reg_set = RegularizationSet.load(args.reg_dir, size=backbone.working_resolution)
            dictionary_path = os.path.join(args.reg_dir, DICTIONARY_FILE)
        else:
            reg_dir = run.artifact("regularization")
            # A separate backbone instance keeps the trained one untouched.
            _, reg_set = build_regularization(
                config, args.subject_dir, reg_dir, _backbone(config)
            )
            dictionary_path = os.path.join(reg_dir, DICTIONARY_FILE)
    else:
        LOG.info("Regularization disabled, training on subject data only")
    checkpoint = finetune(
        subjects,
        reg_set,
        config.adapter_config(),
        config.loss_weights(),
        steps=config.training.steps,
        lr=config.training.learning_rate,
        seed=config.seed,
        backbone=backbone,
        batch_size=config.training.batch_size,
        mask_inflation=config.training.mask_inflation,
        identity_token=config.training.identity_token,
        out_dir=checkpoint_dir,
    )
    if dictionary_path and os.path.exists(dictionary_path):
        shutil.copy(dictionary_path, os.path.join(checkpoint_dir, DICTIONARY_FILE))
    if checkpoint.loss_log:
        print("Final smoothed loss: {:.4f}".format(smooth_losses(checkpoint.loss_log)[-1]))
    print("Checkpoint written to {}".format(checkpoint_dir))
    return checkpoint_dir


def _load_dictionary(dictionary_path, checkpoint_dir):
    path = dictionary_path
    if path is None and checkpoint_dir:
        path = os.path.join(checkpoint_dir, DICTIONARY_FILE)
    if path and os.path.exists(path):
        return AttributeDictionary.load(path)
    return None


def _conditioning(config, backbone, prompt, dictionary):
    guidance = config.dif.guidance_scale
    if not config.ablation.tas:
        return Conditioning(backbone.encode_text(prompt), guidance)
    if dictionary is None:
        LOG.warning("No attribute dictionary, skipping attribute substitution")
        return Conditioning(backbone.encode_text(prompt), guidance)
    return substitute(
        prompt,
        dictionary,
        backbone,
        matcher=_vlm(config),
        mode=config.tas.mode,
        template=config.tas.template,
        guidance_scale=guidance,
    )


def _request(config, backbone, background, mask_path, prompt, dictionary):
    mask = image_io.read_mask(mask_path)
    return InpaintRequest(
        background=background,
        mask=mask,
        conditioning=_conditioning(config, backbone, prompt, dictionary),
        schedule=config.sampler_schedule(),
        seed=config.seed,
        enlarge_ratio=config.dif.enlarge_ratio,
        gch_full_frame=config.dif.gch_full_frame,
        sampler=config.dif.sampler,
    )


def _tuned_backbone(config, checkpoint_dir):
    backbone = _backbone(config)
    if checkpoint_dir:
        Checkpoint.load(checkpoint_dir).apply(backbone)
    return backbone


def cmd_inpaint(config, args, run):
    out_path = run.artifact("output.png")
    if args.multi:
        with open(args.multi) as f:
            manifest = json.load(f)
        base = os.path.dirname(os.path.abspath(args.multi))
        resolve = lambda p: p if p is None or os.path.isabs(p) else os.path.join(base, p)
        background = image_io.read_image(resolve(manifest["background"]))
        requests, backbones = [], []
        for entry in manifest["requests"]:
            checkpoint_dir = resolve(entry.get("checkpoint"))
            backbone = _tuned_backbone(config, checkpoint_dir)
            dictionary = _load_dictionary(resolve(entry.get("dictionary")), checkpoint_dir)
            requests.append(
                _request(config, backbone, background, resolve(entry["mask"]), entry["prompt"], dictionary)
            )
            backbones.append(backbone)
        result = inpaint_multi(requests, background, backbones, use_dif=config.ablation.dif)
    else:
        backbone = _tuned_backbone(config, args.checkpoint)
        dictionary = _load_dictionary(args.dictionary, args.checkpoint)
        background = image_io.read_image(args.background)
        request = _request(config, backbone, background, args.mask, args.prompt, dictionary)
        result = inpaint(
            request,
            backbone,
            use_dif=config.ablation.dif,
            trace_dir=run.artifact("trace") if args.trace else None,
        )
    image_io.write_image(out_path, result)
    print("Wrote {}".format(out_path))
    return out_path


def cmd_bench(config, args, run):
    backgrounds = filter_backgrounds(
        args.image_dir,
        min_resolution=config.bench.min_resolution,
        min_box_side=config.bench.min_box_side,
        annotation_path=args.annotations,
    )
    token = config.training.identity_token
    subject_ids = [subject_id for subject_id, _ in args.subjects]
    prompt_sets = {
        subject_id: default_prompt_sets(subject_class, token)
        for subject_id, subject_class in args.subjects
    }
    tuples = assemble(
        subject_ids, backgrounds, config.bench.per_subject, prompt_sets, seed=config.seed
    )
    with open(run.artifact("backgrounds.json"), "w") as f:
        json.dump([b.to_json() for b in backgrounds], f, indent=2, sort_keys=True)
    materialize_masks(tuples, run.path)
    path = save_benchmark(tuples, run.artifact("benchmark.json"))
    print("Wrote {} tuples to {}".format(len(tuples), path))
    return path


def _strip_token(text, token):
    return " ".join(word for word in text.split() if word != token)


def cmd_eval(config, args, run):
    task = Task(args.task)
    samples = expand_samples(load_benchmark(args.benchmark), task)
    ids = [sample_id for sample_id, _, _ in samples]
    subject_images = {}
    for _, bench_tuple, _ in samples:
        if bench_tuple.subject_id not in subject_images:
            subject_dir = os.path.join(args.subjects_dir, bench_tuple.subject_id)
            paths = image_io.list_images(subject_dir) if os.path.isdir(subject_dir) else []
            if not paths:
                raise PipelineError("No images for subject {}".format(bench_tuple.subject_id))
            subject_images[bench_tuple.subject_id] = image_io.read_image(paths[0])
    token = config.training.identity_token
    results = load_images(args.results_dir, ids)
    prompts = {i: _strip_token(p.text, token) for i, _, p in samples}
    report = evaluate_run(
        results=results,
        sources={i: subject_images[t.subject_id] for i, t, _ in samples},
        prompts=prompts,
        masks={i: t.mask() for i, t, _ in samples},
        embedders={
            "clip": load_embedder(config.eval.clip_embedder),
            "dino": load_embedder(config.eval.dino_embedder),
        },
        task=task,
        crop_ratio=config.eval.crop_ratio,
        resolution=config.eval.resolution,
    )
    path = report.save(run.artifact("report.json"))
    print(report.table())
    if args.judge_requests:
        JudgeClient(run.artifact("judge")).write_requests(
            (i, prompts[i], results[i]) for i in ids
        )
    return path


def cmd_sweep(config, args, run):
    children = []
    for index, value in enumerate(args.values):
        argv = list(args.child)
        if args.config:
            argv += ["--config", args.config]
        for override in args.overrides:
            argv += ["--set", override]
        argv += [
            "--set",
            "{}={}".format(args.param, value),
            "--seed",
            str(config.seed + index),
        ]
        LOG.info("Sweep {}={} ({} of {})".format(args.param, value, index + 1, len(args.values)))
        code, child_run = run_command(argv)
        children.append(
            {
                "value": parse_scalar(value),
                "exit_code": code,
                "run": child_run.path if child_run else None,
            }
        )
    path = run.artifact("sweep.json")
    with open(path, "w") as f:
        json.dump({"param": args.param, "children": children}, f, indent=2, sort_keys=True)
    if any(child["exit_code"] != ExitCode.SUCCESS.value for child in children):
        raise PipelineError("At least one sweep child failed, see {}".format(path))
    return path


COMMANDS = {
    "adm": cmd_adm,
    "finetune": cmd_finetune,
    "inpaint": cmd_inpaint,
    "bench": cmd_bench,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
}


def check_inputs(args):
    """
    Path checks that must pass before a run directory is created.
    """
    for flag in (
        "subject_dir",
        "reg_dir",
        "background",
        "mask",
        "checkpoint",
        "dictionary",
        "multi",
        "image_dir",
        "annotations",
        "results_dir",
        "benchmark",
        "subjects_dir",
    ):
        path = getattr(args, flag, None)
        if path and not os.path.exists(path):
            raise ConfigError("--{} {} does not exist".format(flag.replace("_", "-"), path))
    subject_dir = getattr(args, "subject_dir", None)
    if subject_dir and not image_io.list_images(subject_dir):
        raise ConfigError("No subject images in {}".format(subject_dir))


def run_command(argv):
    """
    Parses `argv`, runs the command and returns (exit code, run directory).
    """
    args = SubjectInpaintArgumentParser().parse_args(argv)
    root = logging.getLogger()
    root.setLevel(logging.DEBUG if args.debug else logging.INFO)
    run = None
    file_handler = None
    try:
        config = load_config(args.config, args.overrides)
        check_inputs(args)
        run = create_run(config, args.command, argv=argv)
        file_handler = logging.FileHandler(run.log_path)
        file_handler.setFormatter(log_formatter)
        root.addHandler(file_handler)
        COMMANDS[args.command](config, args, run)
    except ConfigError as e:
        LOG.error("Configuration error: {}".format(e))
        return ExitCode.CONFIG_ERROR.value, run
    except PipelineError as e:
        LOG.error("Pipeline error: {}".format(e))
        return ExitCode.PIPELINE_ERROR.value, run
    except ValueError as e:
        LOG.error("Pipeline error: invalid value: {}".format(e))
        return ExitCode.PIPELINE_ERROR.value, run
    finally:
        if file_handler is not None:
            root.removeHandler(file_handler)
            file_handler.close()
    return ExitCode.SUCCESS.value, run


def main(argv=None):
    code, _ = run_command(sys.argv[1:] if argv is None else argv)
    return code


if __name__ == "__main__":
    sys.exit(main())
