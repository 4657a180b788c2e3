"""SNR improvement and mask-quality scores."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .stft import ComplexSpectrogram

log = logging.getLogger(__name__)

DB_CAP = 100.0


class DegenerateMaskError(ValueError):
    pass


@dataclass
class EvalReport:
    delta_snr_db: float
    mask_cross_entropy: float = float("nan")
    mask_accuracy: float = float("nan")
    capped: bool = False
    meta: dict = field(default_factory=dict)


def _data(X):
    return X.data if isinstance(X, ComplexSpectrogram) else np.asarray(X)


def _masks(p):
    return np.asarray(getattr(p, "values", p), dtype=np.float64)


def _ratio_db(num, den):
    if den == 0 and num == 0:
        raise DegenerateMaskError("degenerate mask coverage")
    if den == 0:
        return DB_CAP, True
    if num == 0:
        return -DB_CAP, True
    return 10.0 * np.log10(num / den), False


def delta_snr(Y, Z, p_opt, with_flag: bool = False):
    """SNR gain of the output Y over the mixture Z, both measured with the
    ground-truth masks (speech class 0, interference class 1).

    Infinite output ratios are capped at +/-100 dB; ``with_flag=True`` also
    returns whether capping happened.
    """
    y = _data(Y)
    z = _data(Z)
    p = _masks(p_opt)
    if y.ndim == 3:
        y = y[0]
    p1, p2 = p[..., 0], p[..., 1]
    if not np.any(p1 > 0) or not np.any(p2 > 0):
        raise DegenerateMaskError("degenerate mask coverage: a class never occurs")
    zin1 = np.sum(np.abs(z * p1[None]) ** 2)
    zin2 = np.sum(np.abs(z * p2[None]) ** 2)
    if zin1 == 0 or zin2 == 0:
        raise DegenerateMaskError("degenerate mask coverage: zero input energy")
    out_db, capped = _ratio_db(np.sum(np.abs(y * p1) ** 2), np.sum(np.abs(y * p2) ** 2))
    value = out_db - 10.0 * np.log10(zin1 / zin2)
    if capped:
        log.warning("output SNR ratio infinite; capped at %g dB", DB_CAP)
        value = float(np.clip(value, -DB_CAP, DB_CAP))
    return (float(value), capped) if with_flag else float(value)


def mask_scores(p_est, p_opt) -> dict:
    from .training import cross_entropy

    pe, po = _masks(p_est), _masks(p_opt)
    acc = float(np.mean(np.argmax(pe, axis=-1) == np.argmax(po, axis=-1)))
    return {"cross_entropy": cross_entropy(pe, po), "accuracy": acc}


def write_eval_csv(path, rows) -> None:
    """Rows are dicts keyed by scenario, beamformer, precision plus EvalReport fields."""
    fields = ["scenario", "beamformer", "precision", "delta_snr_db", "mask_cross_entropy",
              "mask_accuracy", "capped"]
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fields, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            r = dict(r)
            if isinstance(r.get("report"), EvalReport):
                r.update(asdict(r.pop("report")))
            w.writerow(r)
