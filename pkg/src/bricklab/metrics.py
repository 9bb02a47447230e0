"""Structural reconstruction scores for assembly pairs.

Scoring first searches for the single lattice rigid transform that
aligns the estimated assembly with the target as well as possible, then
partitions bricks by how well they landed:

  correct             mapped and pose exact under the alignment
  misplaced_connected mapped, wrong pose, but at least one incident edge
                      corresponds to a target edge with the same snaps
  misplaced_loose     mapped, wrong pose, no corresponding edge
  extra               estimated bricks without a partner
  missing             target bricks without a partner

From the partition come four metrics: an F1 over brick shape and color
ignoring pose (f1_b), an F1 requiring exact pose after alignment (f1_a),
an F1 over mapped connection edges (f1_e), and an edit distance (aed)
that charges one move per misplaced brick and one insert or delete per
missing or extra brick.

Candidate alignments pair each estimated brick with each same-shape,
same-color target brick; within a candidate, exact pose matching is a
forced partial pairing (two bricks can never share a pose), so greedy
matching is optimal. Ties between equally good transforms prefer the
smallest rotation, then the smallest translation, then a canonical
transform order, which keeps every score invariant under brick
relabeling.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

from bricklab.assembly import Assembly, Edge, derive_edges, transform_assembly
from bricklab.geometry import IDENTITY, Pose, rotation_angle, trace
from bricklab.shapes import Catalog


@dataclass
class MatchResult:
    transform: Pose
    mapping: dict[int, int]  # estimated id -> target id, injective
    pose_correct: frozenset[int]  # estimated ids mapped with exact pose


@dataclass
class MatchStatistics:
    correct: frozenset[int]
    misplaced_connected: frozenset[int]
    misplaced_loose: frozenset[int]
    extra: frozenset[int]
    missing: frozenset[int]  # target side ids

    @property
    def misplaced(self) -> frozenset[int]:
        return self.misplaced_connected | self.misplaced_loose


@dataclass
class Scores:
    f1_b: float
    f1_e: float
    f1_a: float
    aed: float

    def as_tuple(self):
        return (self.f1_b, self.f1_e, self.f1_a, self.aed)


def _f1(tp: int, fp: int, fn: int) -> float:
    if tp + fp + fn == 0:
        return 1.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def _brick_key(brick):
    return (brick.shape_id, brick.color_id)


def _pose_key(pose: Pose):
    return (pose.rotation, pose.translation)


def _greedy_pose_matches(estimated: Assembly, target: Assembly, transform: Pose):
    """Pairs with exact pose equality under the transform.

    Pose equality pins a brick to a unique world placement, so at most
    one partner exists on either side and greedy pairing is optimal.
    """
    target_lookup = {}
    for tid in sorted(target.bricks):
        brick = target.bricks[tid]
        target_lookup[(_brick_key(brick), _pose_key(brick.pose))] = tid
    pairs = {}
    for eid in sorted(estimated.bricks):
        brick = estimated.bricks[eid]
        posed = transform.compose(brick.pose)
        tid = target_lookup.get((_brick_key(brick), _pose_key(posed)))
        if tid is not None and tid not in pairs.values():
            pairs[eid] = tid
    return pairs


def _candidate_transforms(estimated: Assembly, target: Assembly):
    seen = {(_pose_key(Pose())): Pose()}
    by_key: dict = {}
    for tid in sorted(target.bricks):
        by_key.setdefault(_brick_key(target.bricks[tid]), []).append(tid)
    for eid in sorted(estimated.bricks):
        brick = estimated.bricks[eid]
        inverse = brick.pose.inverse()
        for tid in by_key.get(_brick_key(brick), ()):
            transform = target.bricks[tid].pose.compose(inverse)
            seen.setdefault(_pose_key(transform), transform)
    return list(seen.values())


def _transform_rank(transform: Pose, matched: int):
    # Larger is better: more exact matches, then the smallest rotation,
    # then the smallest translation, then canonical transform order.
    l1 = sum(abs(c) for c in transform.translation)
    return (
        matched,
        trace(transform.rotation),
        -l1,
        -transform.rotation,
        tuple(-c for c in transform.translation),
    )


def match(estimated: Assembly, target: Assembly) -> MatchResult:
    """Best single alignment plus a completed shape and color mapping."""
    best_transform = Pose()
    best_pairs = _greedy_pose_matches(estimated, target, best_transform)
    best_rank = _transform_rank(best_transform, len(best_pairs))
    limit = min(len(estimated), len(target))
    if len(best_pairs) < limit:
        for transform in _candidate_transforms(estimated, target):
            pairs = _greedy_pose_matches(estimated, target, transform)
            rank = _transform_rank(transform, len(pairs))
            if rank > best_rank:
                best_transform, best_pairs, best_rank = transform, pairs, rank
                if len(pairs) == limit and transform.rotation == IDENTITY:
                    break

    mapping = dict(best_pairs)
    # Complete the mapping on shape and color alone. Bricks are paired in
    # canonical pose order so relabeling instance ids cannot change any
    # derived score.
    used_targets = set(mapping.values())
    leftovers_by_key: dict = {}
    for tid in sorted(target.bricks):
        if tid in used_targets:
            continue
        brick = target.bricks[tid]
        leftovers_by_key.setdefault(_brick_key(brick), []).append(
            (_pose_key(brick.pose), tid)
        )
    for bucket in leftovers_by_key.values():
        bucket.sort()
    pending = [eid for eid in estimated.bricks if eid not in mapping]
    pending.sort(
        key=lambda eid: (
            _brick_key(estimated.bricks[eid]),
            _pose_key(estimated.bricks[eid].pose),
        )
    )
    for eid in pending:
        bucket = leftovers_by_key.get(_brick_key(estimated.bricks[eid]))
        if bucket:
            mapping[eid] = bucket.pop(0)[1]
    return MatchResult(
        transform=best_transform,
        mapping=mapping,
        pose_correct=frozenset(best_pairs),
    )


def match_statistics(
    result: MatchResult,
    catalog: Catalog,
    estimated: Assembly,
    target: Assembly,
) -> MatchStatistics:
    for eid, tid in result.mapping.items():
        if eid not in estimated.bricks or tid not in target.bricks:
            raise ValueError("stale mapping: unknown instance ids")
        if _brick_key(estimated.bricks[eid]) != _brick_key(target.bricks[tid]):
            raise ValueError("stale mapping: shape or color mismatch")

    correct = set(result.pose_correct)
    extra = {eid for eid in estimated.bricks if eid not in result.mapping}
    missing = {
        tid for tid in target.bricks if tid not in set(result.mapping.values())
    }
    target_edges = _edge_keys(derive_edges(catalog, target))
    estimated_edges = derive_edges(catalog, estimated)
    connected = set()
    for eid in result.mapping:
        if eid in correct:
            continue
        if _has_corresponding_edge(eid, result.mapping, estimated_edges, target_edges):
            connected.add(eid)
    loose = set(result.mapping) - correct - connected
    return MatchStatistics(
        correct=frozenset(correct),
        misplaced_connected=frozenset(connected),
        misplaced_loose=frozenset(loose),
        extra=frozenset(extra),
        missing=frozenset(missing),
    )


def _edge_keys(edges) -> set:
    return {(e.instance_a, e.snap_a, e.instance_b, e.snap_b) for e in edges}


def _has_corresponding_edge(eid, mapping, estimated_edges, target_edge_keys):
    for edge in estimated_edges:
        if eid not in (edge.instance_a, edge.instance_b):
            continue
        a, b = mapping.get(edge.instance_a), mapping.get(edge.instance_b)
        if a is None or b is None:
            continue
        image = Edge.normalized(a, edge.snap_a, b, edge.snap_b)
        if (image.instance_a, image.snap_a, image.instance_b, image.snap_b) in (
            target_edge_keys
        ):
            return True
    return False


def _edge_true_positives(mapping, estimated_edges, target_edge_keys) -> int:
    hits = 0
    for edge in estimated_edges:
        a, b = mapping.get(edge.instance_a), mapping.get(edge.instance_b)
        if a is None or b is None:
            continue
        image = Edge.normalized(a, edge.snap_a, b, edge.snap_b)
        if (image.instance_a, image.snap_a, image.instance_b, image.snap_b) in (
            target_edge_keys
        ):
            hits += 1
    return hits


def score(catalog: Catalog, estimated: Assembly, target: Assembly) -> Scores:
    result = match(estimated, target)
    stats = match_statistics(result, catalog, estimated, target)

    mapped = len(result.mapping)
    f1_b = _f1(mapped, len(estimated) - mapped, len(target) - mapped)

    exact = len(stats.correct)
    f1_a = _f1(exact, len(estimated) - exact, len(target) - exact)

    estimated_edges = derive_edges(catalog, estimated)
    target_edges = derive_edges(catalog, target)
    edge_tp = _edge_true_positives(
        result.mapping, estimated_edges, _edge_keys(target_edges)
    )
    f1_e = _f1(
        edge_tp, len(estimated_edges) - edge_tp, len(target_edges) - edge_tp
    )

    aed = float(len(stats.misplaced) + len(stats.extra) + len(stats.missing))
    return Scores(f1_b=f1_b, f1_e=f1_e, f1_a=f1_a, aed=aed)


def assemblies_equivalent(catalog: Catalog, a: Assembly, b: Assembly) -> bool:
    """Exact equality up to one lattice rigid transform."""
    if len(a) != len(b):
        return False
    if len(a) == 0:
        return True
    result = match(a, b)
    return len(result.pose_correct) == len(a)


def mean_scores(rows: list[Scores]) -> Scores:
    if not rows:
        return Scores(0.0, 0.0, 0.0, 0.0)
    n = len(rows)
    return Scores(
        f1_b=sum(r.f1_b for r in rows) / n,
        f1_e=sum(r.f1_e for r in rows) / n,
        f1_a=sum(r.f1_a for r in rows) / n,
        aed=sum(r.aed for r in rows) / n,
    )


SCORE_FIELDS = ("f1_b", "f1_e", "f1_a", "aed")


def write_scores_csv(path, rows: list[tuple[str, Scores]]) -> None:
    """Per-pair scores plus a trailing mean row."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(("pair",) + SCORE_FIELDS)
        for name, s in rows:
            writer.writerow([name, s.f1_b, s.f1_e, s.f1_a, s.aed])
        mean = mean_scores([s for _, s in rows])
        writer.writerow(["mean", mean.f1_b, mean.f1_e, mean.f1_a, mean.aed])
