from enum import Enum


class DateFormat(Enum):
    RUN_DIR_FORMAT = "%Y%m%d-%H%M%S"
    MANIFEST_FORMAT = "%Y-%m-%dT%H:%M:%SZ"
