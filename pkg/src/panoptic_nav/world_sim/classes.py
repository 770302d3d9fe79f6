"""Semantic label set and the fixed per-class feature vectors."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

CLASS_NAMES = (
    "void", "wall", "floor", "chair", "door", "table", "picture", "cabinet",
    "cushion", "window", "sofa", "bed", "curtain", "chest_of_drawers", "plant",
    "sink", "stairs", "ceiling", "toilet", "stool", "towel", "mirror",
    "tv_monitor", "shower", "column", "bathtub", "counter",
)
NUM_CLASSES = len(CLASS_NAMES)
CLASS_IDS = {name: i for i, name in enumerate(CLASS_NAMES)}

VOID = 0
WALL = CLASS_IDS["wall"]
FLOOR = CLASS_IDS["floor"]
DOOR = CLASS_IDS["door"]
STAIRS = CLASS_IDS["stairs"]
CEILING = CLASS_IDS["ceiling"]

# classes an agent can stand on; used when occupancy must be read off semantics
WALKABLE = frozenset({FLOOR, DOOR, STAIRS})
LANDMARKS = frozenset({DOOR, STAIRS})

FEATURE_DIM = 512
FEATURE_SEED = 20240611
MAX_ABS_COS = 0.2


def class_id(value) -> int:
    """Accept a class id or name and return the id."""
    if isinstance(value, str):
        try:
            return CLASS_IDS[value]
        except KeyError:
            raise ValueError(f"unknown semantic class {value!r}") from None
    cid = int(value)
    if not 0 <= cid < NUM_CLASSES:
        raise ValueError(f"class id {cid} outside [0, {NUM_CLASSES})")
    return cid


@lru_cache(maxsize=1)
def class_feature_table() -> np.ndarray:
    """All class vectors as a read-only ``(27, 512)`` float64 array.

    Class ``c`` draws from ``default_rng([FEATURE_SEED, c, attempt])``; the
    attempt counter is bumped until the vector's |cos| against every earlier
    class is below ``MAX_ABS_COS``.
    """
    table = np.zeros((NUM_CLASSES, FEATURE_DIM))
    for c in range(NUM_CLASSES):
        attempt = 0
        while True:
            v = np.random.default_rng([FEATURE_SEED, c, attempt]).standard_normal(FEATURE_DIM)
            v /= np.linalg.norm(v)
            if c == 0 or np.abs(table[:c] @ v).max() < MAX_ABS_COS:
                break
            attempt += 1
        table[c] = v
    table.setflags(write=False)
    return table


def class_feature(cid) -> np.ndarray:
    """Deterministic unit feature vector for a semantic class."""
    return class_feature_table()[class_id(cid)].copy()
