"""
Run directories: runs/<timestamp>-<config hash>/ holding manifest.json, logs/
and the command's artifacts.
"""
import json
import logging
import os
import platform
import shutil

import attr
import numpy as np
import torch

from config import config_hash
from enums.date_format import DateFormat
from utils import formatter

LOG = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
LOG_DIR = "logs"
LOG_FILE = "run.log"


def package_versions():
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "torch": torch.__version__,
    }


@attr.s(frozen=True)
class RunDirectory:
    path = attr.ib()
    config = attr.ib()
    command = attr.ib()

    @property
    def manifest_path(self):
        return os.path.join(self.path, MANIFEST_FILE)

    @property
    def log_path(self):
        return os.path.join(self.path, LOG_DIR, LOG_FILE)

    def artifact(self, *parts):
        path = os.path.join(self.path, *parts)
        parent = os.path.dirname(path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        return path

    def manifest(self, argv=(), extra=None):
        manifest = {
            "command": self.command,
            "argv": list(argv),
            "config": self.config.to_dict(),
            "config_hash": config_hash(self.config),
            "seeds": {"seed": self.config.seed},
            "versions": package_versions(),
            "created": formatter.format_date(
                formatter.utc_now(), DateFormat.MANIFEST_FORMAT.value
            ),
        }
        manifest.update(extra or {})
        return manifest


def create_run(config, command, argv=(), extra=None, now=None):
    """
    Creates the run directory and writes its manifest before anything else.
    `config` must already be validated.
    """
    now = now or formatter.utc_now()
    name = "{}-{}".format(
        formatter.format_date(now, DateFormat.RUN_DIR_FORMAT.value),
        config_hash(config),
    )
    path = os.path.join(config.run_root, name)
    suffix = 1
    while os.path.exists(path):
        path = os.path.join(config.run_root, "{}-{}".format(name, suffix))
        suffix += 1
    run = RunDirectory(path=path, config=config, command=command)
    try:
        os.makedirs(os.path.join(path, LOG_DIR))
        with open(run.manifest_path, "w") as f:
            json.dump(run.manifest(argv, extra), f, indent=2, sort_keys=True)
    except OSError:
        shutil.rmtree(path, ignore_errors=True)
        raise
    LOG.info("Run directory {}".format(path))
    return run
