"""Keypoint taxonomy and the human skeletal graph used by the structural loss."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

NUM_KEYPOINTS = 16


class KeypointId(IntEnum):
    """The 16 body keypoints (MPII convention), indexed 0..15."""

    head_top = 0
    upper_neck = 1
    thorax = 2
    pelvis = 3
    r_shoulder = 4
    l_shoulder = 5
    r_elbow = 6
    l_elbow = 7
    r_wrist = 8
    l_wrist = 9
    r_hip = 10
    l_hip = 11
    r_knee = 12
    l_knee = 13
    r_ankle = 14
    l_ankle = 15


KEYPOINT_NAMES = tuple(k.name for k in KeypointId)

# Distal limb keypoints, the ones most often hidden by occluders.
LIMB_KEYPOINTS = (
    KeypointId.r_elbow, KeypointId.l_elbow,
    KeypointId.r_wrist, KeypointId.l_wrist,
    KeypointId.r_knee, KeypointId.l_knee,
    KeypointId.r_ankle, KeypointId.l_ankle,
)


class Visibility(IntEnum):
    """Annotation state of one keypoint."""

    unannotated = 0
    occluded_annotated = 1
    visible = 2


@dataclass
class KeypointSet:
    """Positions and visibility flags for the 16 keypoints of one person.

    `xy` is a (16, 2) float array of (x, y) pixel positions in crop
    coordinates; `visibility` is a (16,) array of Visibility values.
    Positions of unannotated keypoints are ignored everywhere.
    """

    xy: np.ndarray
    visibility: np.ndarray

    def __post_init__(self):
        self.xy = np.asarray(self.xy, dtype=np.float64)
        self.visibility = np.asarray(self.visibility, dtype=np.int64)
        if self.xy.shape != (NUM_KEYPOINTS, 2):
            raise ValueError(f"expected (16, 2) positions, got {self.xy.shape}")
        if self.visibility.shape != (NUM_KEYPOINTS,):
            raise ValueError(f"expected (16,) visibility, got {self.visibility.shape}")

    @property
    def annotated(self) -> np.ndarray:
        """Boolean mask of keypoints carrying a usable annotation."""
        return self.visibility != Visibility.unannotated

    def copy(self) -> "KeypointSet":
        return KeypointSet(self.xy.copy(), self.visibility.copy())

    @classmethod
    def all_visible(cls, xy: np.ndarray) -> "KeypointSet":
        return cls(np.asarray(xy, dtype=np.float64),
                   np.full(NUM_KEYPOINTS, Visibility.visible, dtype=np.int64))


Edge = tuple[KeypointId, KeypointId]
Triplet = tuple[KeypointId, KeypointId, KeypointId]


@dataclass(frozen=True)
class SkeletalGraph:
    """Undirected graph over keypoints: pair edges plus limb triplet groups.

    The neighbor set of a keypoint is the union of its partners across all
    pair edges and triplet groups containing it.
    """

    pair_edges: tuple[Edge, ...]
    triplets: tuple[Triplet, ...] = ()
    _neighbor_sets: dict = field(default=None, repr=False, compare=False, hash=False)

    def neighbors(self, k: KeypointId) -> frozenset[KeypointId]:
        """Structurally connected keypoints of `k`."""
        return self._neighbor_table()[KeypointId(k)]

    def _neighbor_table(self) -> dict[KeypointId, frozenset[KeypointId]]:
        if self._neighbor_sets is None:
            table = {k: set() for k in KeypointId}
            for a, b in self.pair_edges:
                table[a].add(b)
                table[b].add(a)
            for group in self.triplets:
                for k in group:
                    table[k].update(m for m in group if m != k)
            frozen = {k: frozenset(v) for k, v in table.items()}
            object.__setattr__(self, "_neighbor_sets", frozen)
        return self._neighbor_sets

    def structural_matrix(self) -> np.ndarray:
        """(16, 16) float64 matrix combining each keypoint with its neighbors.

        Row m has ones at m and every member of neighbors(m); multiplying it
        against flattened heatmaps yields the combined structural maps.
        """
        mat = np.eye(NUM_KEYPOINTS, dtype=np.float64)
        for k in KeypointId:
            for j in self.neighbors(k):
                mat[k, j] = 1.0
        return mat

    def to_json(self) -> str:
        doc = {
            "pair_edges": [[a.name, b.name] for a, b in self.pair_edges],
            "triplets": [[a.name, b.name, c.name] for a, b, c in self.triplets],
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SkeletalGraph":
        doc = json.loads(text)
        edges = tuple((KeypointId[a], KeypointId[b]) for a, b in doc["pair_edges"])
        triplets = tuple((KeypointId[a], KeypointId[b], KeypointId[c])
                         for a, b, c in doc.get("triplets", ()))
        return cls(pair_edges=edges, triplets=triplets)


def default_skeletal_graph() -> SkeletalGraph:
    """Canonical skeletal graph: limb chains, torso linkage, and limb triplets."""
    K = KeypointId
    edges = (
        (K.head_top, K.upper_neck),
        (K.upper_neck, K.thorax),
        (K.thorax, K.pelvis),
        (K.r_shoulder, K.r_elbow),
        (K.r_elbow, K.r_wrist),
        (K.l_shoulder, K.l_elbow),
        (K.l_elbow, K.l_wrist),
        (K.r_hip, K.r_knee),
        (K.r_knee, K.r_ankle),
        (K.l_hip, K.l_knee),
        (K.l_knee, K.l_ankle),
        (K.r_hip, K.l_hip),
        (K.thorax, K.r_shoulder),
        (K.thorax, K.l_shoulder),
        (K.pelvis, K.r_hip),
        (K.pelvis, K.l_hip),
    )
    triplets = (
        (K.r_shoulder, K.r_elbow, K.r_wrist),
        (K.l_shoulder, K.l_elbow, K.l_wrist),
        (K.r_hip, K.r_knee, K.r_ankle),
        (K.l_hip, K.l_knee, K.l_ankle),
    )
    return SkeletalGraph(pair_edges=edges, triplets=triplets)


def validate_graph(g: SkeletalGraph) -> list[str]:
    """Check graph invariants; returns one description per violation."""
    violations = []
    seen = set()
    for a, b in g.pair_edges:
        if a == b:
            violations.append(f"self-loop edge ({a.name}, {a.name})")
            continue
        key = frozenset((a, b))
        if key in seen:
            violations.append(f"duplicate edge ({a.name}, {b.name})")
        seen.add(key)
    for group in g.triplets:
        if len(set(group)) != 3:
            names = ", ".join(k.name for k in group)
            violations.append(f"degenerate triplet ({names})")
    return violations
