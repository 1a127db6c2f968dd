from embedders.base import EmbedderHandle, normalize
from embedders.mock import MockClipEmbedder, MockImageEmbedder, mock_dino
from errors import BackboneUnavailableError


def load_embedder(name):
    """
    "mock-clip", "mock-dino", "clip:<model id>" or "dino:<model id>".
    """
    if name == "mock-clip":
        return MockClipEmbedder()
    if name == "mock-dino":
        return mock_dino()
    if name.startswith("clip:") or name.startswith("dino:"):
        from embedders.transformers_embedder import ClipEmbedder, DinoEmbedder

        kind, model_id = name.split(":", 1)
        return ClipEmbedder(model_id) if kind == "clip" else DinoEmbedder(model_id)
    raise BackboneUnavailableError("Unknown embedder '{}'".format(name))
