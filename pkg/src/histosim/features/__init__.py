from .extractor import (  # noqa: F401
    Extractor,
    ExtractorSpec,
    build_synthetic_model,
    load_extractor,
    make_synthetic_extractor,
    open_extractor,
    write_synthetic_model,
)
from .stack import FeatureStack  # noqa: F401
