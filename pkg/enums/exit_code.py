from enum import Enum


class ExitCode(Enum):
    SUCCESS = 0
    CONFIG_ERROR = 2
    PIPELINE_ERROR = 3
