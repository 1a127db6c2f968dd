# -*- coding: utf-8 -*-
"""
Few-shot adapter fine-tuning with the region-reweighted denoising loss.
"""
import json
import logging
import os

import attr
import numpy as np
import torch
from tqdm import tqdm

from adm import PromptRecord, contains_identity_token
from backbones.types import as_image, as_mask
from dif import downsample_mask, enlarge_mask
from enums.sample_source import SampleSource
from errors import (
    DimensionMismatchError,
    DivergenceError,
    EmptyBatchError,
    IdentityTokenLeakError,
    PipelineError,
)
from utils import container, image_io

LOG = logging.getLogger(__name__)

ADAPTER_DIR = "adapter"
METADATA_FILE = "metadata.json"
LOSS_LOG_FILE = "loss_log.json"


def _nonnegative(instance, attribute, value):
    if value < 0:
        raise ValueError("{} must be nonnegative, got {}".format(attribute.name, value))


@attr.s(frozen=True)
class LossWeights:
    tau1 = attr.ib(default=1.5, converter=float, validator=_nonnegative)
    tau2 = attr.ib(default=0.7, converter=float, validator=_nonnegative)
    beta = attr.ib(default=0.4, converter=float, validator=_nonnegative)


@attr.s(frozen=True)
class AdapterConfig:
    rank = attr.ib(default=4, converter=int)
    target_projections = attr.ib(default=("key", "value"), converter=tuple)
    alpha = attr.ib(default=None)

    @rank.validator
    def _check_rank(self, attribute, value):
        if value < 1:
            raise ValueError("Adapter rank must be at least 1, got {}".format(value))

    @target_projections.validator
    def _check_targets(self, attribute, value):
        unknown = set(value) - {"key", "value", "query", "output"}
        if unknown or not value:
            raise ValueError("Bad adapter targets: {}".format(list(value)))


@attr.s(frozen=True)
class TrainSample:
    image = attr.ib(converter=as_image)
    mask = attr.ib(converter=as_mask)
    prompt = attr.ib(validator=attr.validators.instance_of(PromptRecord))
    source = attr.ib(converter=SampleSource)

    def __attrs_post_init__(self):
        if self.mask.shape != self.image.shape[:2]:
            raise DimensionMismatchError(
                "Mask {} does not match image {}".format(
                    self.mask.shape, self.image.shape[:2]
                )
            )
        if self.source is SampleSource.SUBJECT and not self.prompt.has_identity_token:
            raise ValueError(
                "Subject prompt '{}' lacks the identity token".format(self.prompt.text)
            )
        if self.source is SampleSource.REGULARIZATION and self.prompt.has_identity_token:
            raise IdentityTokenLeakError(
                "Regularization prompt '{}' carries the identity token".format(
                    self.prompt.text
                )
            )


def _as_tensor(value):
    if isinstance(value, torch.Tensor):
        return value
    return torch.as_tensor(np.asarray(value, dtype=np.float64))


def _weight_map(mask, weights, like):
    mask = _as_tensor(mask).to(like.dtype)
    if mask.shape != like.shape[:-1]:
        raise DimensionMismatchError(
            "Mask {} does not match latent {}".format(tuple(mask.shape), tuple(like.shape))
        )
    return (weights.tau1 * mask + weights.tau2 * (1.0 - mask)).unsqueeze(-1)


def loss_re(predicted_noise, true_noise, mask, weights):
    """
    Mean over every latent element of tau1 * m * d^2 + tau2 * (1 - m) * d^2,
    with d the noise residual and the mask broadcast over channels.
    """
    predicted = _as_tensor(predicted_noise)
    true = _as_tensor(true_noise).to(predicted.dtype)
    if predicted.shape != true.shape:
        raise DimensionMismatchError(
            "Predicted noise {} does not match true noise {}".format(
                tuple(predicted.shape), tuple(true.shape)
            )
        )
    return (_weight_map(mask, weights, predicted) * (predicted - true) ** 2).mean()


def loss_re_grad(predicted_noise, true_noise, mask, weights):
    predicted = np.asarray(predicted_noise, dtype=np.float64)
    true = np.asarray(true_noise, dtype=np.float64)
    w = _weight_map(mask, weights, torch.as_tensor(predicted)).numpy()
    return 2.0 * w * (predicted - true) / predicted.size


def _sample_loss(sample, model, weights, rng, mask=None):
    latent = model.encode(sample.image)
    region = downsample_mask(
        sample.mask if mask is None else mask, latent.shape[0], latent.shape[1]
    )
    t = int(rng.integers(1, model.schedule.T + 1))
    eps = rng.standard_normal(latent.shape)
    z_t = model.forward_noise(latent, t, eps)
    tokens = model.encode_text(sample.prompt.text).tokens
    predicted = model.predict_noise_train(
        torch.as_tensor(z_t, dtype=torch.float32)[None],
        torch.as_tensor(tokens, dtype=torch.float32)[None],
        t,
    )
    return loss_re(
        predicted[0],
        torch.as_tensor(eps, dtype=torch.float32),
        torch.as_tensor(region, dtype=torch.float32),
        weights,
    )


def _batch_loss(batch, model, weights, rng, masks=None):
    masks = masks or [None] * len(batch)
    losses = [
        _sample_loss(sample, model, weights, rng, mask)
        for sample, mask in zip(batch, masks)
    ]
    return torch.stack(losses).mean()


def loss_final(subject_batch, reg_batch, weights, model, noise_seed, subject_masks=None):
    """
    L_RE over the subject batch plus beta times L_RE over the regularization
    batch. `reg_batch=None` trains without regularization data.
    """
    if not subject_batch:
        raise EmptyBatchError("Subject batch is empty")
    if reg_batch is not None and not reg_batch:
        raise EmptyBatchError("Regularization batch is empty")
    rng = np.random.default_rng(noise_seed)
    loss = _batch_loss(subject_batch, model, weights, rng, subject_masks)
    if reg_batch is not None:
        loss = loss + weights.beta * _batch_loss(reg_batch, model, weights, rng)
    return loss


def subject_prompt(subject_class, identity_token="sks"):
    return PromptRecord(
        text="a {} {}".format(identity_token, subject_class),
        has_identity_token=True,
        attributes_used=[],
    )


def load_subject_dir(directory, size, subject_class, identity_token="sks"):
    """
    Loads every image of `directory`; masks come from a `masks/` sibling
    with the same file names, or default to the full frame.
    """
    paths = image_io.list_images(directory)
    if not paths:
        raise EmptyBatchError("No subject images in {}".format(directory))
    prompt = subject_prompt(subject_class, identity_token)
    samples = []
    for path in paths:
        mask_path = os.path.join(directory, "masks", os.path.basename(path))
        if os.path.exists(mask_path):
            mask = image_io.read_mask(mask_path, size=size)
        else:
            LOG.warning("No mask for {}, using the full frame".format(path))
            mask = np.ones((size, size), dtype=bool)
        samples.append(
            TrainSample(
                image=image_io.read_image(path, size=size),
                mask=mask,
                prompt=prompt,
                source=SampleSource.SUBJECT,
            )
        )
    LOG.info("Loaded {} subject image(s) from {}".format(len(samples), directory))
    return samples


def regularization_samples(reg_set, identity_token="sks"):
    samples = []
    for sample in reg_set.samples:
        if contains_identity_token(sample.prompt.text, identity_token):
            raise IdentityTokenLeakError(
                "Regularization prompt '{}' carries the identity token".format(
                    sample.prompt.text
                )
            )
        samples.append(
            TrainSample(
                image=sample.image,
                mask=sample.mask,
                prompt=sample.prompt,
                source=SampleSource.REGULARIZATION,
            )
        )
    return samples


def smooth_losses(log, window=20):
    values = [entry["loss"] if isinstance(entry, dict) else entry for entry in log]
    return [
        float(np.mean(values[max(0, i - window + 1) : i + 1]))
        for i in range(len(values))
    ]


@attr.s
class Checkpoint:
    adapter_state = attr.ib(factory=dict)
    metadata = attr.ib(factory=dict)
    loss_log = attr.ib(factory=list)

    def save(self, directory):
        adapter_dir = os.path.join(directory, ADAPTER_DIR)
        os.makedirs(adapter_dir, exist_ok=True)
        for name, value in sorted(self.adapter_state.items()):
            container.write_array(
                os.path.join(adapter_dir, "{}.dmlt".format(name)), value
            )
        with open(os.path.join(directory, METADATA_FILE), "w") as f:
            json.dump(self.metadata, f, indent=2, sort_keys=True)
        with open(os.path.join(directory, LOSS_LOG_FILE), "w") as f:
            json.dump(self.loss_log, f, indent=2)
        LOG.info("Saved checkpoint to {}".format(directory))
        return directory

    @classmethod
    def load(cls, directory):
        adapter_dir = os.path.join(directory, ADAPTER_DIR)
        state = {
            name[: -len(".dmlt")]: container.read_array(os.path.join(adapter_dir, name))
            for name in sorted(os.listdir(adapter_dir))
            if name.endswith(".dmlt")
        }
        with open(os.path.join(directory, METADATA_FILE)) as f:
            metadata = json.load(f)
        with open(os.path.join(directory, LOSS_LOG_FILE)) as f:
            loss_log = json.load(f)
        return cls(adapter_state=state, metadata=metadata, loss_log=loss_log)

    @property
    def adapter_config(self):
        return AdapterConfig(**self.metadata["adapter"])

    def apply(self, backbone):
        """
        Adds the recorded adapters to `backbone` and loads their weights.
        """
        expected = self.metadata.get("base_weights_hash")
        if expected and backbone.base_weights_hash() != expected:
            LOG.warning("Checkpoint was trained on different base weights")
        backbone.add_adapters(self.adapter_config)
        backbone.load_adapter_state(self.adapter_state)
        return backbone


def _pick(samples, size, rng):
    return [samples[i] for i in rng.integers(0, len(samples), size=size)]


def finetune(
    subjects,
    reg,
    adapters,
    weights,
    steps,
    lr,
    seed,
    backbone,
    batch_size=1,
    mask_inflation=(0.05, 0.25),
    identity_token="sks",
    out_dir=None,
):
    """
    Trains adapter weights only. `reg=None` drops the regularization term.
    """
    if not subjects:
        raise EmptyBatchError("finetune needs at least one subject image")
    reg_samples = regularization_samples(reg, identity_token) if reg is not None else None
    if reg_samples is not None and not reg_samples:
        raise EmptyBatchError("Regularization set is empty")

    backbone.add_adapters(adapters)
    freeze = getattr(backbone, "freeze_base", None)
    if freeze is not None:
        freeze()
    base_hash = backbone.base_weights_hash()
    parameters = backbone.trainable_parameters()
    torch.manual_seed(seed)
    optimizer = torch.optim.Adam(parameters, lr=lr) if steps else None
    rng = np.random.default_rng(seed)
    low, high = mask_inflation

    loss_log = []
    progress = tqdm(range(steps), desc="finetune", disable=steps == 0)
    for step in progress:
        subject_batch = _pick(subjects, batch_size, rng)
        masks = [enlarge_mask(s.mask, rng.uniform(low, high)) for s in subject_batch]
        reg_batch = _pick(reg_samples, batch_size, rng) if reg_samples else None
        optimizer.zero_grad()
        loss = loss_final(
            subject_batch,
            reg_batch,
            weights,
            backbone,
            noise_seed=int(rng.integers(0, 2 ** 31)),
            subject_masks=masks,
        )
        value = float(loss.detach())
        if not np.isfinite(value):
            raise DivergenceError("Loss became {} at step {}".format(value, step))
        loss.backward()
        optimizer.step()
        loss_log.append({"step": step, "loss": value})
        progress.set_postfix({"loss": "{:.4f}".format(value)})
        LOG.debug("step {} loss {:.6f}".format(step, value))
    progress.close()

    if backbone.base_weights_hash() != base_hash:
        raise PipelineError("Base weights changed during adapter training")
    if loss_log:
        smoothed = smooth_losses(loss_log)
        LOG.info(
            "Trained {} steps, smoothed loss {:.4f} -> {:.4f}".format(
                steps, smoothed[min(19, len(smoothed) - 1)], smoothed[-1]
            )
        )
    checkpoint = Checkpoint(
        adapter_state=backbone.adapter_state(),
        metadata={
            "adapter": attr.asdict(adapters),
            "loss_weights": attr.asdict(weights),
            "steps": steps,
            "learning_rate": lr,
            "seed": seed,
            "batch_size": batch_size,
            "regularization": reg_samples is not None,
            "backbone": backbone.name,
            "base_weights_hash": base_hash,
        },
        loss_log=loss_log,
    )
    if out_dir is not None:
        checkpoint.save(out_dir)
    return checkpoint
