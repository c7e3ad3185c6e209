from __future__ import annotations

from dataclasses import dataclass

import numpy as np

JOINT_NAMES = (
    "head", "neck", "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist",
    "l_hip", "r_hip", "l_knee", "r_knee", "l_ankle", "r_ankle", "pelvis",
)

CANONICAL_EDGES = (
    (0, 1), (1, 2), (1, 3), (2, 4), (4, 6), (3, 5), (5, 7),
    (1, 14), (14, 8), (14, 9), (8, 10), (10, 12), (9, 11), (11, 13),
)


@dataclass(frozen=True)
class SkeletonGraph:
    J: int
    edges: tuple[tuple[int, int], ...]
    A1: np.ndarray
    A2: np.ndarray


def build_adjacency(edges, J: int) -> SkeletonGraph:
    """1-hop adjacency with self-loops and its 2-hop reachability closure."""
    edges = tuple((int(a), int(b)) for a, b in edges)
    seen = set()
    A1 = np.eye(J, dtype=np.int64)
    for a, b in edges:
        if not (0 <= a < J and 0 <= b < J):
            raise ValueError(f"edge ({a}, {b}) out of range for J={J}")
        key = (min(a, b), max(a, b))
        if key in seen:
            raise ValueError(f"duplicate edge {key}")
        seen.add(key)
        A1[a, b] = A1[b, a] = 1
    A2 = (A1 @ A1 > 0).astype(np.int64)
    return SkeletonGraph(J, edges, A1, A2)


def canonical_skeleton() -> SkeletonGraph:
    return build_adjacency(CANONICAL_EDGES, len(JOINT_NAMES))
