"""
Semantic class taxonomy for navigation: 30 classes, their RGB encoding and the
group motion costs used to build costmaps.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

GROUPS = ("free", "mid1", "mid2", "mid3", "obs")
DEFAULT_GROUP_COSTS = {"free": 0.0, "mid1": 0.5, "mid2": 1.0, "mid3": 1.5, "obs": 2.0}
N_CLASSES = 30
MAX_COST = 2.0

# Traversable groups live in the green part of the colorspace, obstacles in
# red (dynamic), blue (static structures), magenta (small objects) and dark
# violet/black (no surface).
DEFAULT_CLASSES = (
    ("sidewalk", (0, 255, 0), "free"),
    ("crosswalk", (0, 240, 60), "free"),
    ("floor", (64, 255, 64), "free"),
    ("stairs", (0, 255, 128), "free"),
    ("gravel", (96, 200, 0), "mid1"),
    ("sand", (128, 200, 32), "mid1"),
    ("snow", (160, 220, 96), "mid1"),
    ("terrain", (100, 160, 0), "mid2"),
    ("road", (160, 160, 0), "mid3"),
    ("person", (255, 0, 0), "obs"),
    ("animal", (230, 30, 30), "obs"),
    ("vehicle", (200, 0, 40), "obs"),
    ("train", (180, 0, 60), "obs"),
    ("motorcycle", (255, 60, 0), "obs"),
    ("bicycle", (220, 60, 60), "obs"),
    ("building", (0, 0, 255), "obs"),
    ("wall", (30, 30, 230), "obs"),
    ("fence", (60, 0, 200), "obs"),
    ("bridge", (0, 60, 200), "obs"),
    ("tunnel", (40, 40, 160), "obs"),
    ("furniture", (90, 0, 255), "obs"),
    ("tree", (0, 90, 180), "obs"),
    ("water_surface", (0, 140, 255), "obs"),
    ("pole", (200, 0, 200), "obs"),
    ("traffic_sign", (255, 0, 160), "obs"),
    ("traffic_light", (160, 0, 255), "obs"),
    ("bench", (180, 60, 180), "obs"),
    ("sky", (0, 0, 128), "obs"),
    ("ceiling", (60, 0, 120), "obs"),
    ("unknown", (0, 0, 0), "obs"),
)


class SemanticsError(Exception):
    """Base error for the semantic taxonomy."""


class UnknownClassError(SemanticsError, KeyError):
    def __init__(self, name):
        super().__init__(name)
        self.name = name

    def __str__(self):
        return f"unknown semantic class {self.name!r}"


class CostTableValidationError(SemanticsError, ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid cost table: " + "; ".join(self.violations))


@dataclass(frozen=True)
class SemanticClass:
    name: str
    color: tuple
    group: str
    cost: float


def validate_table(classes, group_costs):
    """
    Collect every violated cost-table invariant

    Args:
        classes (list): (name, color, group) triples or SemanticClass entries
        group_costs (dict): Group name -> motion cost

    Returns:
        list: Human readable violations, empty when the table is valid
    """
    violations = []

    missing = [g for g in GROUPS if g not in group_costs]
    extra = [g for g in group_costs if g not in GROUPS]
    if missing:
        violations.append(f"missing group costs: {', '.join(missing)}")
    if extra:
        violations.append(f"unknown groups in costs: {', '.join(extra)}")

    for g in GROUPS:
        if g not in group_costs:
            continue
        c = group_costs[g]
        if not isinstance(c, (int, float)) or not math.isfinite(c) or c < 0 or c > MAX_COST:
            violations.append(f"group {g} cost {c!r} outside [0, {MAX_COST}]")

    if not missing:
        levels = [group_costs[g] for g in GROUPS]
        for lo, hi, a, b in zip(GROUPS, GROUPS[1:], levels, levels[1:]):
            if not a < b:
                violations.append(f"group ordering violated: c_{lo}={a} is not below c_{hi}={b}")

    if len(classes) != N_CLASSES:
        violations.append(f"expected {N_CLASSES} classes, got {len(classes)}")

    names, colors = set(), set()
    for entry in classes:
        name, color, group = _unpack(entry)
        if not isinstance(name, str) or not name:
            violations.append(f"class name {name!r} must be a non-empty string")
        elif name in names:
            violations.append(f"duplicate class name {name!r}")
        names.add(name)

        if not _is_rgb(color):
            violations.append(f"class {name!r} color {color!r} is not an RGB triple in [0, 255]")
        elif color in colors:
            violations.append(f"class {name!r} reuses color {list(color)}")
        else:
            colors.add(color)

        if group not in GROUPS:
            violations.append(f"class {name!r} has unknown group {group!r}")

    return violations


def _unpack(entry):
    if isinstance(entry, SemanticClass):
        return entry.name, entry.color, entry.group
    name, color, group = entry
    return name, _as_color(color), group


def _as_color(color):
    if isinstance(color, (list, tuple, np.ndarray)):
        return tuple(color)
    return color


def _is_rgb(color):
    return (
        isinstance(color, tuple)
        and len(color) == 3
        and all(isinstance(ch, (int, np.integer)) and not isinstance(ch, bool) and 0 <= ch <= 255 for ch in color)
    )


@dataclass(frozen=True)
class CostTable:
    """Ordered semantic classes with their group costs. Immutable."""

    classes: tuple
    group_costs: MappingProxyType
    _index: MappingProxyType = field(repr=False, compare=False)
    colors: np.ndarray = field(repr=False, compare=False)
    costs: np.ndarray = field(repr=False, compare=False)
    obstacle: np.ndarray = field(repr=False, compare=False)

    @classmethod
    def build(cls, entries, group_costs=None):
        """
        Validate and assemble a table

        Args:
            entries (list): (name, color, group) triples in class-index order
            group_costs (dict): Group costs, defaults to DEFAULT_GROUP_COSTS

        Returns:
            CostTable: The validated table

        Raises:
            CostTableValidationError: Listing every violated invariant
        """
        group_costs = dict(DEFAULT_GROUP_COSTS if group_costs is None else group_costs)
        violations = validate_table(entries, group_costs)
        if violations:
            raise CostTableValidationError(violations)

        classes = tuple(
            SemanticClass(name, tuple(int(ch) for ch in color), group, float(group_costs[group]))
            for name, color, group in (_unpack(e) for e in entries)
        )
        colors = np.array([c.color for c in classes], dtype=np.int64)
        costs = np.array([c.cost for c in classes], dtype=np.float64)
        obstacle = np.array([c.group == "obs" for c in classes])
        for arr in (colors, costs, obstacle):
            arr.setflags(write=False)

        return cls(
            classes=classes,
            group_costs=MappingProxyType({g: float(group_costs[g]) for g in GROUPS}),
            _index=MappingProxyType({c.name: i for i, c in enumerate(classes)}),
            colors=colors,
            costs=costs,
            obstacle=obstacle,
        )

    @property
    def names(self):
        return [c.name for c in self.classes]

    @property
    def c_free(self):
        return self.group_costs["free"]

    @property
    def c_obs(self):
        return self.group_costs["obs"]

    def index_of(self, name):
        try:
            return self._index[name]
        except KeyError:
            raise UnknownClassError(name) from None

    def get(self, name):
        return self.classes[self.index_of(name)]

    def color_of(self, name):
        return self.get(name).color

    def is_obstacle(self, name):
        return self.get(name).group == "obs"

    def level_above(self, cost):
        """Next higher group cost, or None for the top level."""
        higher = [c for c in self.group_costs.values() if c > cost]
        return min(higher) if higher else None

    def level_below(self, cost):
        lower = [c for c in self.group_costs.values() if c < cost]
        return max(lower) if lower else None


def cost_of(table, name):
    """Group motion cost of a class; raises UnknownClassError for unknown names."""
    return table.get(name).cost


def class_of_color(table, color):
    """
    Decode an RGB color to the nearest class

    Args:
        table (CostTable): Taxonomy to decode against
        color: RGB triple

    Returns:
        SemanticClass: Class with minimum Euclidean RGB distance, lowest index on ties
    """
    query = np.asarray(color, dtype=np.int64).reshape(1, 3)
    dist2 = np.sum((table.colors - query) ** 2, axis=1)
    return table.classes[int(np.argmin(dist2))]


def classes_of_colors(table, colors):
    """Vectorized nearest-class decoding; returns class indices."""
    colors = np.asarray(colors, dtype=np.int64).reshape(-1, 1, 3)
    dist2 = np.sum((colors - table.colors[None, :, :]) ** 2, axis=2)
    return np.argmin(dist2, axis=1)


_DEFAULT = None


def default_table():
    """Built-in 30-class table with group costs 0.0 / 0.5 / 1.0 / 1.5 / 2.0."""
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = CostTable.build(DEFAULT_CLASSES, DEFAULT_GROUP_COSTS)
    return _DEFAULT


def table_to_dict(table):
    return {
        "group_costs": dict(table.group_costs),
        "classes": [{"name": c.name, "color": list(c.color), "group": c.group} for c in table.classes],
    }


def table_from_dict(data):
    """
    Build a table from its JSON structure

    Args:
        data: Either {"group_costs": ..., "classes": [...]} or a bare class array

    Returns:
        CostTable: The validated table
    """
    if isinstance(data, list):
        entries, group_costs = data, None
    elif isinstance(data, dict) and "classes" in data:
        entries, group_costs = data["classes"], data.get("group_costs")
    else:
        raise CostTableValidationError(["expected a class array or an object with a 'classes' array"])

    violations = []
    triples = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or not {"name", "color", "group"} <= set(entry):
            violations.append(f"entry {i} must have name, color and group")
            continue
        triples.append((entry["name"], _as_color(entry["color"]), entry["group"]))
    if violations:
        raise CostTableValidationError(violations)
    return CostTable.build(triples, group_costs)


def save_table(table, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(table_to_dict(table), fh, indent=2)
        fh.write("\n")


def load_table(path):
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    table = table_from_dict(data)
    logger.info("Loaded cost table with %d classes from %s", len(table.classes), path)
    return table


def table_frame(table):
    """
    Tabular view of the taxonomy

    Args:
        table (CostTable): Taxonomy

    Returns:
        pandas.DataFrame: One row per class with name, r, g, b, group and cost
    """
    return pd.DataFrame(
        [
            {"name": c.name, "r": c.color[0], "g": c.color[1], "b": c.color[2], "group": c.group, "cost": c.cost}
            for c in table.classes
        ]
    )
