"""histosim: full-reference similarity metrics for cross-stain histology.

Library surface:

- :mod:`histosim.patch` / :mod:`histosim.manifest` - domain types, JSONL
  manifests, label aggregation, WSI-level splits.
- :mod:`histosim.preprocess` - the six-slot preprocessing pipeline and its
  compact ``n|mode|i|h|c|s`` configuration codes.
- :mod:`histosim.metrics` - classical metrics (psnr, ncc, mi, ssim_w7/w31,
  ms-ssim, fsim, fsimc) and feature-space distances.
- :mod:`histosim.features` - frozen feature extractors (ONNX graphs and the
  deterministic synthetic extractor used for testing).
- :mod:`histosim.haps` - the calibrated feature-correlation similarity head.
- :mod:`histosim.robustness` - geometric stress-test and sensitivity indices.
- :mod:`histosim.evaluation` - Spearman/AUROC statistics, grouped CV,
  WSI bootstrap and the staged preprocessing search.
- :mod:`histosim.curation` - manifest scoring and bottom-fraction filtering.
"""

__version__ = "0.1.0"

from .patch import Colorspace, Patch  # noqa: F401
