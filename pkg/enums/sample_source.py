from enum import Enum


class SampleSource(Enum):
    SUBJECT = "subject"
    REGULARIZATION = "regularization"
