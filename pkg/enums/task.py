from enum import Enum


class Task(Enum):
    IDENTITY = "identity"
    EDITING = "editing"
