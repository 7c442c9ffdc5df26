"""Calibrated similarity head over per-stage feature correlation distances.

The score of a pair is a linear aggregation of the four layer distances,
``logit = sum_l w_l * d_l + b``, oriented as the logit of P(Acceptable):
higher means more similar. The head is fit as an L2-regularized logistic
regression on expert binary labels (Acceptable=1, Bad=0) with an L-BFGS
solver; the distance form used by robustness plots is the negated logit.
"""

import datetime
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .errors import CalibrationError
from .features.extractor import Extractor
from .metrics.deep import LayerDistances, channel_pearson_distance
from .patch import Patch
from .preprocess import PreprocessConfig, apply_pipeline

DEFAULT_L2 = 1.0
DEFAULT_MAX_ITER = 500
GRAD_TOL = 1e-6
POSITIVE_CLASS = "Acceptable"


@dataclass(frozen=True)
class HapsHead:
    w: tuple  # 4 per-stage weights
    b: float
    trained_on: str = ""
    positive_class: str = POSITIVE_CLASS

    def __post_init__(self):
        w = tuple(float(v) for v in self.w)
        if len(w) != 4:
            raise CalibrationError(f"head needs 4 weights, got {len(w)}")
        if not all(np.isfinite(w)) or not np.isfinite(self.b):
            raise CalibrationError("head coefficients must be finite")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", float(self.b))

    def save(self, path: str | Path) -> None:
        obj = {
            "w": list(self.w),
            "b": self.b,
            "positive_class": self.positive_class,
            "trained_on": self.trained_on,
            "created_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        }
        Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "HapsHead":
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise CalibrationError(f"head file not found: {path}")
        except json.JSONDecodeError as exc:
            raise CalibrationError(f"head file {path} is not valid JSON: {exc.msg}")
        try:
            return cls(
                w=tuple(obj["w"]),
                b=float(obj["b"]),
                trained_on=str(obj.get("trained_on", "")),
                positive_class=str(obj.get("positive_class", POSITIVE_CLASS)),
            )
        except KeyError as exc:
            raise CalibrationError(f"head file {path} missing field {exc}")


def haps_logit(d: LayerDistances, head: HapsHead) -> float:
    """Similarity logit: sum of weighted layer distances plus intercept."""
    return float(np.dot(head.w, d.as_array()) + head.b)


def haps_distance(d: LayerDistances, head: HapsHead) -> float:
    """Negated logit, for plots that expect a distance orientation."""
    return -haps_logit(d, head)


def _objective(theta, X, y, l2):
    # sum of binary cross-entropies + (l2/2)*||w||^2; intercept unregularized
    w, b = theta[:-1], theta[-1]
    z = X @ w + b
    # log(1 + exp(-|z|)) + max(-yz-ish, 0) form keeps the loss overflow-free
    loss = np.sum(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * np.dot(w, w)
    p = 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))
    grad_w = X.T @ (p - y) + l2 * w
    grad_b = np.sum(p - y)
    return loss, np.concatenate([grad_w, [grad_b]])


def calibrate(
    train: list[tuple[LayerDistances, int]],
    l2: float = DEFAULT_L2,
    max_iter: int = DEFAULT_MAX_ITER,
    trained_on: str = "",
    x0: np.ndarray | None = None,
) -> HapsHead:
    """Fit the head on (layer distances, binary label) pairs.

    Labels are 1 for Acceptable and 0 for Bad; both classes must appear.
    The objective is convex, so the solution is initialization-independent;
    if the gradient norm has not reached 1e-6 within max_iter a warning is
    emitted and the current head is returned anyway.
    """
    if l2 < 0:
        raise CalibrationError("l2 must be nonnegative")
    if not train:
        raise CalibrationError("empty training set")
    X = np.stack([d.as_array() for d, _ in train])
    y = np.array([int(label) for _, label in train], dtype=np.float64)
    if not set(np.unique(y)) == {0.0, 1.0}:
        raise CalibrationError(
            "calibration needs both classes (Acceptable=1 and Bad=0) present"
        )
    theta0 = np.zeros(5) if x0 is None else np.asarray(x0, dtype=np.float64)
    if theta0.shape != (5,):
        raise CalibrationError("x0 must have 5 entries (4 weights + intercept)")
    result = minimize(
        _objective,
        theta0,
        args=(X, y, float(l2)),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iter, "gtol": GRAD_TOL, "ftol": 0.0},
    )
    grad_norm = float(np.max(np.abs(result.jac)))
    if grad_norm > GRAD_TOL:
        warnings.warn(
            f"calibration stopped with gradient norm {grad_norm:.3e} > {GRAD_TOL:.0e} "
            f"after {result.nit} iterations",
            RuntimeWarning,
            stacklevel=2,
        )
    w = result.x[:4]
    return HapsHead(w=tuple(w), b=float(result.x[4]), trained_on=trained_on)


def pair_layer_distances(
    he: Patch, ihc: Patch, cfg: PreprocessConfig, extractor: Extractor
) -> LayerDistances:
    """Preprocess a pair, extract both feature stacks, compute distances."""
    he_p, ihc_p = apply_pipeline(he, ihc, cfg)
    return channel_pearson_distance(extractor.extract(he_p), extractor.extract(ihc_p))


def haps_score_pair(
    he: Patch,
    ihc: Patch,
    cfg: PreprocessConfig,
    extractor: Extractor,
    head: HapsHead,
) -> float:
    """Full scoring composition: pipeline -> features -> distances -> logit."""
    return haps_logit(pair_layer_distances(he, ihc, cfg, extractor), head)
