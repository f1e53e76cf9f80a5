"""Correspondence building for semantic and anonymous player detections."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import InputError
from .field_model import FieldTemplate
from .geometry.homography import RansacConfig, estimate_homography_ransac
from .geometry.types import PLAYER, Correspondences, Homography

log = logging.getLogger(__name__)

SEMANTIC = "semantic"
PLAYER_KIND = "player"


@dataclass(frozen=True)
class Detection:
    u: float
    v: float
    kind: str = SEMANTIC
    id: int | None = None
    confidence: float = 1.0

    def __post_init__(self):
        if self.kind not in (SEMANTIC, PLAYER_KIND):
            raise InputError(f"unknown detection kind {self.kind!r}")
        if self.kind == SEMANTIC and (self.id is None or self.id < 1):
            raise InputError("semantic detections need a keypoint id >= 1")
        if not 0.0 <= self.confidence <= 1.0:
            raise InputError(f"confidence must lie in [0, 1], got {self.confidence}")
        if not (np.isfinite(self.u) and np.isfinite(self.v)):
            raise InputError("detection coordinates must be finite")

    @property
    def is_player(self) -> bool:
        return self.kind == PLAYER_KIND


def split_detections(dets: Iterable[Detection]) -> tuple[list[Detection], np.ndarray]:
    """Semantic detections as a list and player detections as an (n, 2) array."""
    semantic, players = [], []
    for d in dets:
        if d.is_player:
            players.append((d.u, d.v))
        else:
            semantic.append(d)
    return semantic, np.asarray(players, dtype=float).reshape(-1, 2)


def match_semantic(dets: Iterable[Detection], template: FieldTemplate) -> Correspondences:
    best: dict[int, Detection] = {}
    for d in dets:
        if d.is_player:
            continue
        if d.id not in template.keypoints:
            log.warning("skipping detection with unknown keypoint id %s", d.id)
            continue
        kept = best.get(d.id)
        if kept is None or d.confidence > kept.confidence:
            best[d.id] = d
    if not best:
        return Correspondences.empty()
    ids = sorted(best)
    image = np.array([(best[i].u, best[i].v) for i in ids])
    return Correspondences(template.world_points(ids), image, np.array(ids))


def associate_players(
    H0: Homography, player_dets, ground_truth, max_dist_m: float = 2.0
) -> Correspondences:
    """Pair player detections with known field positions.

    Detections are back-projected to the field with H0^-1, then matched
    one-to-one by taking candidate pairs in ascending field distance.
    Pairs farther apart than ``max_dist_m`` are never made.
    """
    dets = np.asarray(player_dets, dtype=float).reshape(-1, 2)
    gt = np.asarray(ground_truth, dtype=float).reshape(-1, 2)
    if len(dets) == 0 or len(gt) == 0:
        return Correspondences.empty()
    back = H0.inverse().apply(dets)
    dist = np.linalg.norm(back[:, None, :] - gt[None, :, :], axis=2)
    dist = np.where(np.isfinite(dist), dist, np.inf)
    di, gi = np.nonzero(dist <= max_dist_m)
    if len(di) == 0:
        return Correspondences.empty()
    # ties broken by detection coordinates so the result does not depend on input order
    order = np.lexsort((gi, dets[di, 1], dets[di, 0], dist[di, gi]))
    used_d, used_g = set(), set()
    pairs = []
    for k in order:
        a, b = int(di[k]), int(gi[k])
        if a in used_d or b in used_g:
            continue
        used_d.add(a)
        used_g.add(b)
        pairs.append((a, b))
    pairs.sort(key=lambda p: p[1])
    d_idx = [p[0] for p in pairs]
    g_idx = [p[1] for p in pairs]
    return Correspondences(gt[g_idx], dets[d_idx], np.full(len(pairs), PLAYER))


def refine_homography_with_players(
    semantic_corrs: Correspondences, player_corrs: Correspondences, cfg: RansacConfig = RansacConfig()
) -> tuple[Homography, np.ndarray]:
    """Robust fit over semantic and player correspondences together.

    Every minimal sample contains at least two semantic points. Returns the
    homography and the inlier mask over ``semantic_corrs + player_corrs``.
    """
    combined = semantic_corrs + player_corrs
    return estimate_homography_ransac(combined, cfg, min_semantic=2)

