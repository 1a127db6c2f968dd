from enum import Enum


class AttributeCategory(Enum):
    # Declaration order is the tie-break order of the keyword matcher.
    COLOR = "color"
    MATERIAL = "material"
    TEXTURE = "texture"
    SHAPE = "shape"
    ACCESSORY = "accessory"
    OTHER = "other"

    @classmethod
    def dictionary_categories(cls):
        return [c for c in cls if c is not cls.OTHER]

    @property
    def keywords(self):
        return KEYWORDS.get(self, ())


KEYWORDS = {
    AttributeCategory.COLOR: (
        "red", "orange", "yellow", "green", "blue", "purple", "pink",
        "brown", "black", "white", "gray", "grey", "beige", "gold",
        "silver", "cyan", "teal",
    ),
    AttributeCategory.MATERIAL: (
        "clay", "glass", "wood", "wooden", "metal", "metallic", "plastic",
        "ceramic", "stone", "marble", "paper", "fabric", "leather",
        "rubber", "porcelain", "steel", "gold-plated", "cast iron",
        "stainless steel",
    ),
    AttributeCategory.TEXTURE: (
        "smooth", "rough", "glossy", "matte", "furry", "fluffy", "shiny",
        "striped", "spotted", "checkered", "woven", "knitted",
    ),
    AttributeCategory.SHAPE: (
        "round", "square", "tall", "short", "flat", "curved", "oval",
        "cubic", "spherical", "slim",
    ),
    AttributeCategory.ACCESSORY: (
        "hat", "scarf", "glasses", "sunglasses", "bow", "collar", "lid",
        "handle", "ribbon", "crown", "necklace",
    ),
}
