from enum import Enum


class Stage(Enum):
    LCG = "LCG"
    GCH = "GCH"
