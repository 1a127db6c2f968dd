from enum import Enum


class TasMode(Enum):
    POOLED_PER_TOKEN = "pooled-per-token"
    FLATTENED = "flattened"
