"""Retrieval evaluation: rank candidate pairs for a triplet query, match
detections against ground truth by IoU on both boxes, and report average
precision per query plus the mean over queries.

Matching is greedy and one-to-one: detections are visited in descending
score order, and each claims the best still-unmatched ground-truth pair in
its image whose subject and object boxes both clear the IoU threshold.
AP is interpolation-free: the sum of precision at each true-positive rank,
divided by the number of ground-truth positives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .data import (
    BoundingBox,
    DataError,
    Dataset,
    Triplet,
    _err,
    _fmt_reals,
    _LineCursor,
    token_to_file,
)
from .model import JointModel, score_pairs


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection area over union area; 0 when the boxes are disjoint."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


@dataclass(frozen=True)
class MatchPolicy:
    """Both boxes of a detection must overlap ground truth by at least tau."""

    tau: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise DataError(f"iou threshold must be in (0, 1], got {self.tau}")


@dataclass(frozen=True)
class Detection:
    pair_id: int
    image_id: int
    score: float
    sub_box: BoundingBox
    obj_box: BoundingBox

    def __post_init__(self):
        if not (math.isfinite(self.score) and 0.0 < self.score < 1.0):
            raise DataError(f"detection score must be finite in (0, 1), got {self.score}")


@dataclass(frozen=True)
class GroundTruthPair:
    image_id: int
    sub_box: BoundingBox
    obj_box: BoundingBox


@dataclass
class APResult:
    query: Triplet
    ap: float
    npos: int
    ndet: int

    @property
    def excluded(self) -> bool:
        """True when the query has no ground-truth positives at all."""
        return self.npos == 0


def ground_truth_for(dataset: Dataset, query: Triplet) -> list[GroundTruthPair]:
    """Ground-truth box pairs: every candidate positive for the query."""
    return [
        GroundTruthPair(p.image_id, p.sub_box, p.obj_box)
        for p in dataset.pairs
        if query in p.positives()
    ]


def rank_candidates(
    model: JointModel, query: Triplet, pairs, vp_override=None
) -> list[Detection]:
    """Candidate pairs as detections, best score first; ties by pair id."""
    scores = score_pairs(model, query, pairs, vp_override=vp_override)
    dets = [
        Detection(p.pair_id, p.image_id, float(s), p.sub_box, p.obj_box)
        for p, s in zip(pairs, scores)
    ]
    dets.sort(key=lambda d: (-d.score, d.pair_id))
    return dets


def match_detections(
    detections: list[Detection],
    ground_truth: list[GroundTruthPair],
    policy: MatchPolicy,
) -> list[bool]:
    """True-positive flag per detection, in the given (descending) order.

    A detection claims the unmatched same-image ground-truth pair with the
    largest min(subject IoU, object IoU) among those where both clear tau;
    ties go to the earlier ground-truth entry.
    """
    matched: set[int] = set()
    flags = []
    for det in detections:
        best, best_q = -1, 0.0
        for j, gt in enumerate(ground_truth):
            if j in matched or gt.image_id != det.image_id:
                continue
            q = min(iou(det.sub_box, gt.sub_box), iou(det.obj_box, gt.obj_box))
            if q >= policy.tau and q > best_q:
                best, best_q = j, q
        if best >= 0:
            matched.add(best)
            flags.append(True)
        else:
            flags.append(False)
    assert len(matched) == sum(flags)  # one ground-truth pair per detection
    return flags


def average_precision(
    query: Triplet,
    detections: list[Detection],
    ground_truth: list[GroundTruthPair],
    policy: MatchPolicy | None = None,
) -> APResult:
    """Interpolation-free AP of a sorted detection list against ground truth."""
    policy = policy or MatchPolicy()
    for prev, det in zip(detections, detections[1:]):
        if det.score > prev.score:
            raise DataError("detections must be sorted by descending score")
    npos = len(ground_truth)
    if npos == 0:
        return APResult(query, 0.0, 0, len(detections))
    flags = match_detections(detections, ground_truth, policy)
    ap, tp = 0.0, 0
    for rank, hit in enumerate(flags, 1):
        if hit:
            tp += 1
            ap += tp / rank
    return APResult(query, ap / npos, npos, len(detections))


def evaluate_query(
    model: JointModel,
    query: Triplet,
    dataset: Dataset,
    policy: MatchPolicy | None = None,
    vp_override=None,
) -> APResult:
    detections = rank_candidates(model, query, dataset.pairs, vp_override=vp_override)
    return average_precision(query, detections, ground_truth_for(dataset, query), policy)


def mean_ap(results: list[APResult]) -> float:
    """Unweighted mean AP over queries with at least one positive."""
    vals = [r.ap for r in results if not r.excluded]
    if not vals:
        raise DataError("every query was excluded (no ground-truth positives)")
    return sum(vals) / len(vals)


def write_results(path: str, results: list[APResult], subjects, predicates, objects):
    """One line per query, then the mean over non-excluded queries."""
    overall = mean_ap(results)
    with open(path, "w") as fh:
        for r in results:
            fh.write(
                f"query {token_to_file(subjects[r.query.s])}"
                f" {token_to_file(predicates[r.query.p])}"
                f" {token_to_file(objects[r.query.o])}"
                f" ap {_fmt_reals([r.ap])} npos {r.npos} ndet {r.ndet}\n"
            )
        fh.write(f"map {_fmt_reals([overall])}\n")


def load_results(path: str, subjects, predicates, objects) -> tuple[list[APResult], float]:
    results: list[APResult] = []
    overall = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            cur = _LineCursor(path, lineno, line.split())
            head = cur.take()
            if head == "map":
                overall = float(cur.reals(1, "map")[0])
            elif head == "query":
                s = cur.token(subjects, "subject")
                p = cur.token(predicates, "predicate")
                o = cur.token(objects, "object")
                cur.keyword("ap")
                ap = float(cur.reals(1, "ap")[0])
                cur.keyword("npos")
                npos = cur.integer("npos")
                cur.keyword("ndet")
                ndet = cur.integer("ndet")
                results.append(APResult(Triplet(s, p, o), ap, npos, ndet))
            else:
                cur.fail(f"expected query or map, found {head!r}")
    if overall is None:
        _err(path, 0, "missing final map line")
    return results, overall
