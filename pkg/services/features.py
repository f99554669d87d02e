"""
Per-epoch feature matrices for the learned models: RF features from the
multilateration path, VO features from the polar steps, and the raw
per-anchor streams for the blackbox model.
"""
import logging
from dataclasses import dataclass

import numpy as np

from services.errors import GeometryError, NumericalError, ValidationError
from services.rf_loc import compose_rf_features, localize_epoch
from services.vo_track import WELL_LIT_KEYPOINTS, PolarStep, compose_vo_features

logger = logging.getLogger(__name__)


@dataclass
class EpochFeatures:
    """Row k of every array describes RF epoch k"""

    t: np.ndarray
    rf: np.ndarray
    vo: np.ndarray
    raw_rf: np.ndarray
    gt: np.ndarray
    rf_position: np.ndarray
    min_power: np.ndarray
    missing: np.ndarray

    def __len__(self):
        return len(self.t)

    def inputs(self, key):
        return getattr(self, key)


def _forward_fill(rows, missing, scenario):
    if missing.all():
        raise NumericalError(f"no epoch of {scenario} could be localized")
    filled = rows.copy()
    first_valid = int(np.argmax(~missing))
    filled[:first_valid] = rows[first_valid]
    for k in range(first_valid + 1, len(rows)):
        if missing[k]:
            filled[k] = filled[k - 1]
    return filled


def build_epoch_features(trace, selector=None, k=3, all_anchors=False, m_ref=WELL_LIT_KEYPOINTS):
    """
    Compose the fusion inputs for every epoch of a trace.

    Args:
        trace (Trace): simulated run
        selector (AnchorSelectorModel): picks K anchors per epoch
        k (int): anchors per epoch in the RF features
        all_anchors (bool): skip selection; multilaterate and describe all anchors
        m_ref (int): keypoint count mapped to certainty 1.0

    Returns:
        EpochFeatures: feature matrices; epochs whose multilateration failed
        repeat the previous epoch's RF features and are flagged missing
    """
    n = len(trace.layout)
    if all_anchors:
        selector, k = None, n
    elif selector is None and k != n:
        raise ValidationError(f"an anchor selector is required to pick {k} of {n} anchors", path="selector")

    rf_rows, positions, min_power = [], [], []
    missing = np.zeros(len(trace.rf), dtype=bool)
    for index, sample in enumerate(trace.rf):
        try:
            result, selected = localize_epoch(sample, trace.layout, selector, k)
            rf_rows.append(compose_rf_features(result, selected, k))
            positions.append([result.position.x, result.position.y])
            min_power.append(min(p for _, _, p in selected))
        except GeometryError as e:
            logger.warning(f"{trace.scenario}: epoch {index} not localized ({e})")
            missing[index] = True
            rf_rows.append(np.full(2 + 2 * k, np.nan))
            positions.append([np.nan, np.nan])
            min_power.append(np.nan)

    rf = np.array(rf_rows)
    if missing.any():
        rf = _forward_fill(rf, missing, trace.scenario)
    vo = np.array([compose_vo_features(PolarStep(v.r, v.theta), v.m, m_ref) for v in trace.vo])
    raw_rf = np.array([np.concatenate([s.ranges(), s.powers()]) for s in trace.rf])
    return EpochFeatures(
        t=trace.rf_times(),
        rf=rf,
        vo=vo,
        raw_rf=raw_rf,
        gt=trace.gt.xy(),
        rf_position=np.array(positions),
        min_power=np.array(min_power),
        missing=missing,
    )
