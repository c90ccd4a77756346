"""Joint trees and the binary adjacency mask used for attention distillation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

H36M17_NAMES = (
    "Hip", "RHip", "RKnee", "RAnkle", "LHip", "LKnee", "LAnkle", "Spine",
    "Thorax", "Neck", "Head", "LShoulder", "LElbow", "LWrist",
    "RShoulder", "RElbow", "RWrist",
)
H36M17_PARENTS = (0, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15)
H36M17_LR = ((4, 1), (5, 2), (6, 3), (11, 14), (12, 15), (13, 16))

# Rest pose: x to the subject's left in image terms, y down, z away from camera.
_H36M17_REST_DIRS = {
    1: (-1, 0, 0), 2: (0, 1, 0), 3: (0, 1, 0),
    4: (1, 0, 0), 5: (0, 1, 0), 6: (0, 1, 0),
    7: (0, -1, 0), 8: (0, -1, 0), 9: (0, -1, 0), 10: (0, -1, 0),
    11: (1, 0, 0), 12: (1, 0, 0), 13: (1, 0, 0),
    14: (-1, 0, 0), 15: (-1, 0, 0), 16: (-1, 0, 0),
}
_H36M17_LENGTHS = {
    1: 132.0, 2: 442.0, 3: 454.0, 4: 132.0, 5: 442.0, 6: 454.0,
    7: 233.0, 8: 257.0, 9: 121.0, 10: 115.0,
    11: 151.0, 12: 278.0, 13: 251.0, 14: 151.0, 15: 278.0, 16: 251.0,
}


@dataclass(frozen=True)
class SkeletonTopology:
    num_joints: int
    edges: tuple[tuple[int, int], ...]
    parent: tuple[int, ...]
    names: tuple[str, ...]
    left_right_pairs: tuple[tuple[int, int], ...] = ()
    bone_lengths_mm: tuple[float, ...] = ()
    rest_directions: tuple[tuple[float, float, float], ...] = field(default=(), compare=False)

    def degree(self, joint: int) -> int:
        return sum(joint in e for e in self.edges)

    def flip_permutation(self) -> np.ndarray:
        perm = np.arange(self.num_joints)
        for a, b in self.left_right_pairs:
            perm[a], perm[b] = b, a
        return perm

    def rest_offsets(self) -> np.ndarray:
        """(J, 3) bone vector from each joint's parent in the rest pose (row 0 is zero)."""
        out = np.zeros((self.num_joints, 3))
        for (p, c), length, d in zip(self.edges, self.bone_lengths_mm, self.rest_directions):
            v = np.asarray(d, dtype=np.float64)
            out[c] = v / np.linalg.norm(v) * length
        return out

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "parent": list(self.parent),
            "edges": [list(e) for e in self.edges],
            "left_right_pairs": [list(p) for p in self.left_right_pairs],
            "bone_lengths_mm": list(self.bone_lengths_mm),
            "rest_directions": [list(d) for d in self.rest_directions],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SkeletonTopology":
        return cls(
            num_joints=len(d["names"]),
            edges=tuple(tuple(e) for e in d["edges"]),
            parent=tuple(d["parent"]),
            names=tuple(d["names"]),
            left_right_pairs=tuple(tuple(p) for p in d.get("left_right_pairs", ())),
            bone_lengths_mm=tuple(float(x) for x in d.get("bone_lengths_mm", ())),
            rest_directions=tuple(tuple(x) for x in d.get("rest_directions", ())),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "SkeletonTopology":
        return cls.from_dict(json.loads(Path(path).read_text()))


def build_h36m17() -> SkeletonTopology:
    """The 17-joint Human3.6M tree (root = Hip)."""
    children = range(1, 17)
    return SkeletonTopology(
        num_joints=17,
        edges=tuple((H36M17_PARENTS[c], c) for c in children),
        parent=H36M17_PARENTS,
        names=H36M17_NAMES,
        left_right_pairs=H36M17_LR,
        bone_lengths_mm=tuple(_H36M17_LENGTHS[c] for c in children),
        rest_directions=tuple(_H36M17_REST_DIRS[c] for c in children),
    )


def validate(topo: SkeletonTopology) -> list[str]:
    """Return every invariant violation as a message; empty list means valid."""
    problems: list[str] = []
    j = topo.num_joints
    for a, b in topo.edges:
        if not (0 <= a < j and 0 <= b < j):
            problems.append(f"index out of range in edge ({a}, {b}) for {j} joints")
    for a, b in topo.left_right_pairs:
        if not (0 <= a < j and 0 <= b < j):
            problems.append(f"index out of range in left/right pair ({a}, {b})")
    if len(topo.edges) != j - 1:
        problems.append(f"not a tree: {len(topo.edges)} edges for {j} joints")
    in_range = [(a, b) for a, b in topo.edges if 0 <= a < j and 0 <= b < j]
    # union-find over the in-range edges: a cycle or a second component breaks the tree
    root = list(range(j))

    def find(x):
        while root[x] != x:
            root[x] = root[root[x]]
            x = root[x]
        return x

    for a, b in in_range:
        ra, rb = find(a), find(b)
        if ra == rb:
            problems.append(f"not a tree: edge ({a}, {b}) closes a cycle")
        else:
            root[ra] = rb
    if j and len({find(x) for x in range(j)}) > 1:
        problems.append("not connected")
    seen = [x for pair in topo.left_right_pairs for x in pair]
    if len(seen) != len(set(seen)):
        problems.append("left/right pairs cover a joint twice")
    if len(topo.parent) != j or len(topo.names) != j:
        problems.append("parent/names length differs from num_joints")
    if topo.bone_lengths_mm and len(topo.bone_lengths_mm) != len(topo.edges):
        problems.append("bone_lengths_mm length differs from edge count")
    return problems


def adjacency_mask(topo: SkeletonTopology, include_self: bool = True) -> np.ndarray:
    """Binary J x J matrix: 1 where two joints share a bone (and on the diagonal)."""
    m = np.zeros((topo.num_joints, topo.num_joints))
    for a, b in topo.edges:
        m[a, b] = m[b, a] = 1.0
    if include_self:
        np.fill_diagonal(m, 1.0)
    return m
