"""Seeded synthetic worlds with machine-checkable gold queries.

A world is a square of side ``extent`` cut into one vertical strip per
region. Each region holds compact *places*; a place has one category and
its nodes take that category's caption templates in turn. A few nodes are
overwritten with a unique object ("a crimson kettle") that explicit queries
name. Implicit queries are gold on every node of one category while a trap
category shares the object word but not the intent word.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal

from ..errors import InvalidSpec
from ..retrieval import Query
from ..topo_map import MapNode, Pose, TopologicalMap, canonical_float

ADJECTIVES = (
    "crimson", "turquoise", "golden", "violet", "silver", "amber", "scarlet", "ivory", "emerald",
    "cobalt", "magenta", "bronze", "indigo", "coral", "maroon", "teal", "lavender", "copper",
    "olive", "saffron",
)
NOUNS = (
    "kettle", "umbrella", "backpack", "trophy", "lantern", "suitcase", "helmet", "guitar", "scooter",
    "teapot", "globe", "accordion", "typewriter", "birdcage", "hourglass", "telescope", "violin",
    "mannequin", "jukebox", "wheelbarrow",
)

GLOBAL_TEMPLATES = (
    "describe the environment near the {label}",
    "give me an overview of the {label} surroundings",
)


@dataclass(frozen=True)
class CategorySpec:
    name: str
    templates: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "templates", tuple(self.templates))
        if not self.templates:
            raise InvalidSpec(f"category {self.name!r} has no caption templates")


@dataclass(frozen=True)
class RegionSpec:
    label: str
    categories: tuple[CategorySpec, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "categories", tuple(self.categories))
        if not self.categories:
            raise InvalidSpec(f"region {self.label!r} has no categories")


@dataclass(frozen=True)
class ImplicitFamily:
    """Queries whose gold is every node of ``gold_category``; ``trap_category``
    shares the object word with the query but not the intent."""

    queries: tuple[str, ...]
    gold_category: str
    trap_category: str


PARK = RegionSpec("park", (
    CategorySpec("bench", ("park bench beside a gravel path", "wooden bench facing the park pond")),
    CategorySpec("lawn", ("open grass lawn in the park", "flower beds lining the park trail")),
    CategorySpec("water_fountain", ("water fountain with free drinks",)),
    CategorySpec("playground", ("children playground with swings", "sandbox next to a park slide")),
    CategorySpec("trees", ("tall oak trees shading the park", "bushes and shrubs along a park hedge")),
))

MARKET = RegionSpec("market", (
    CategorySpec("vendor_counter", (
        "cashier counter where customers buy coffee",
        "fridge stocked with bottled drinks and juice",
        "menu board above the market kiosk counter",
    )),
    CategorySpec("stall", ("market stall with fresh fruit", "vegetable crates at a market stand")),
    CategorySpec("water_fountain", ("water fountain with free drinks",)),
    CategorySpec("parking", ("parked cars along the market street", "bicycle rack near the sidewalk")),
))

BUY_DRINKS = ImplicitFamily(
    queries=(
        "where can I buy some drinks",
        "I want to buy drinks",
        "where could I buy a few drinks",
        "find me a place to buy drinks",
        "where is a good spot to buy drinks",
        "I would like to buy cold drinks",
        "show me where to buy drinks",
        "where can we buy drinks nearby",
    ),
    gold_category="vendor_counter",
    trap_category="water_fountain",
)


@dataclass(frozen=True)
class WorldSpec:
    seed: int = 0
    node_count: int = 50
    extent: float = 200.0
    region_specs: tuple[RegionSpec, ...] = (PARK, MARKET)
    edge_policy: Literal["exploration_chain", "proximity_radius"] = "exploration_chain"
    place_size: int = 4
    explicit_count: int = 10
    implicit_families: tuple[ImplicitFamily, ...] = (BUY_DRINKS,)
    # proximity_radius policy: connect nodes closer than this (meters)
    edge_radius: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "region_specs", tuple(self.region_specs))
        object.__setattr__(self, "implicit_families", tuple(self.implicit_families))
        if self.node_count < 1:
            raise InvalidSpec("node_count must be >= 1")
        if not (self.extent > 0 and math.isfinite(self.extent)):
            raise InvalidSpec("extent must be a positive finite length")
        if not self.region_specs:
            raise InvalidSpec("at least one region is required")
        labels = [r.label for r in self.region_specs]
        if len(set(labels)) != len(labels):
            raise InvalidSpec("region labels must be unique")
        if self.edge_policy not in ("exploration_chain", "proximity_radius"):
            raise InvalidSpec(f"unknown edge_policy {self.edge_policy!r}")
        if self.place_size < 1:
            raise InvalidSpec("place_size must be >= 1")
        if not 0 <= self.explicit_count <= len(ADJECTIVES):
            raise InvalidSpec(f"explicit_count must be within 0..{len(ADJECTIVES)}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> WorldSpec:
        data = dict(data)
        if "region_specs" in data:
            data["region_specs"] = tuple(
                RegionSpec(r["label"], tuple(CategorySpec(c["name"], tuple(c["templates"]))
                                             for c in r["categories"]))
                for r in data["region_specs"])
        if "implicit_families" in data:
            data["implicit_families"] = tuple(
                ImplicitFamily(tuple(f["queries"]), f["gold_category"], f["trap_category"])
                for f in data["implicit_families"])
        try:
            return cls(**data)
        except TypeError as exc:
            raise InvalidSpec(str(exc)) from None

    @classmethod
    def from_file(cls, path: str | Path) -> WorldSpec:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class GoldQuery:
    id: str
    query: Query
    gold_leaves: frozenset[str] = frozenset()
    gold_terms: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "gold_leaves", frozenset(self.gold_leaves))
        object.__setattr__(self, "gold_terms", tuple(self.gold_terms))
        if self.query.kind == "global":
            if not self.gold_terms:
                raise InvalidSpec(f"global query {self.id} needs gold_terms")
        elif not self.gold_leaves:
            raise InvalidSpec(f"{self.query.kind} query {self.id} needs gold_leaves")


@dataclass
class _Place:
    region: int
    category: CategorySpec
    size: int
    center: tuple[float, float] = (0.0, 0.0)
    node_ids: list[str] = field(default_factory=list)


def _split_even(total: int, parts: int) -> list[int]:
    return [total // parts + (1 if i < total % parts else 0) for i in range(parts)]


def generate_world(spec: WorldSpec) -> tuple[TopologicalMap, list[GoldQuery]]:
    """Build the map and gold queries; identical specs give identical worlds."""
    rng = random.Random(spec.seed)
    regions = spec.region_specs
    strip = spec.extent / len(regions)
    width = max(4, len(str(spec.node_count - 1)))

    places: list[tuple[_Place, float]] = []
    for r_idx, (region, n_region) in enumerate(zip(regions, _split_even(spec.node_count, len(regions)))):
        if n_region == 0:
            continue
        n_places = math.ceil(n_region / spec.place_size)
        sizes = _split_even(n_region, n_places)
        region_places = [_Place(r_idx, region.categories[j % len(region.categories)], s)
                         for j, s in enumerate(sizes)]
        # place grid inside the strip, leaving a margin so regions stay apart
        margin = 0.1 * strip
        w, h = strip - 2 * margin, spec.extent - 2 * margin
        cols = max(1, math.ceil(math.sqrt(n_places * w / h)))
        rows = math.ceil(n_places / cols)
        cell_w, cell_h = w / cols, h / rows
        cells = [(c, r) for r in range(rows) for c in range(cols)]
        rng.shuffle(cells)
        spread = 0.15 * min(cell_w, cell_h)
        for place, (c, r) in zip(region_places, cells):
            cx = r_idx * strip + margin + (c + 0.5 + rng.uniform(-0.1, 0.1)) * cell_w
            cy = margin + (r + 0.5 + rng.uniform(-0.1, 0.1)) * cell_h
            place.center = (cx, cy)
        places.extend((p, spread) for p in region_places)

    order: list[str] = []
    category_of: dict[str, str] = {}
    region_of: dict[str, str] = {}
    records: dict[str, tuple[Pose, str]] = {}
    for place, spread in places:
        for j in range(place.size):
            angle = rng.uniform(0.0, 2.0 * math.pi)
            radius = spread * math.sqrt(rng.random())
            x = place.center[0] + radius * math.cos(angle)
            y = place.center[1] + radius * math.sin(angle)
            yaw = rng.uniform(-math.pi, math.pi)
            node_id = f"n{len(order):0{width}d}"
            # store file precision so a saved world loads back unchanged
            pose = Pose(canonical_float(x), canonical_float(y), 0.0, canonical_float(yaw))
            records[node_id] = (pose, place.category.templates[j % len(place.category.templates)])
            place.node_ids.append(node_id)
            category_of[node_id] = place.category.name
            region_of[node_id] = regions[place.region].label
            order.append(node_id)

    # unique objects for explicit queries, kept off implicit gold/trap nodes when possible
    protected = {c for f in spec.implicit_families for c in (f.gold_category, f.trap_category)}
    free = [n for n in order if category_of[n] not in protected]
    pool = free if len(free) >= spec.explicit_count else order
    targets = sorted(rng.sample(pool, min(spec.explicit_count, len(pool))))
    adjectives = rng.sample(ADJECTIVES, len(targets))
    nouns = rng.sample(NOUNS, len(targets))
    objects = {}
    for node_id, adj, noun in zip(targets, adjectives, nouns):
        objects[node_id] = f"{adj} {noun}"
        article = "an" if adj[0] in "aeiou" else "a"
        records[node_id] = (records[node_id][0], f"{article} {adj} {noun}")

    tmap = TopologicalMap()
    for node_id in order:
        pose, caption = records[node_id]
        tmap.add_node(MapNode(node_id, pose, caption, image_ref=f"images/{node_id}.jpg"))
    _add_edges(tmap, order, spec)

    queries: list[GoldQuery] = []
    for i, node_id in enumerate(targets):
        phrase = objects[node_id]
        gold = frozenset(n.id for n in tmap.nodes if phrase in n.caption)
        queries.append(GoldQuery(f"e{i:03d}", Query(f"find the {phrase}", "explicit"), gold))
    i = 0
    for family in spec.implicit_families:
        gold = frozenset(n for n in order if category_of[n] == family.gold_category)
        if not gold:
            continue
        for text in family.queries:
            queries.append(GoldQuery(f"i{i:03d}", Query(text, "implicit"), gold))
            i += 1
    labels = tuple(r.label for r in regions if r.label in set(region_of.values()))
    i = 0
    for label in labels:
        for tmpl in GLOBAL_TEMPLATES:
            queries.append(GoldQuery(f"g{i:03d}", Query(tmpl.format(label=label), "global"),
                                     gold_terms=labels))
            i += 1
    return tmap, queries


def _add_edges(tmap: TopologicalMap, order: list[str], spec: WorldSpec) -> None:
    if spec.edge_policy == "exploration_chain":
        for a, b in zip(order, order[1:]):
            tmap.add_edge(a, b, canonical_float(tmap.node(a).pose.distance(tmap.node(b).pose)))
        return
    radius = spec.edge_radius
    if radius is None:
        radius = 0.25 * spec.extent / math.sqrt(max(1, len(order)))
    nodes = [tmap.node(n) for n in order]
    for i, a in enumerate(nodes):
        for b in nodes[i + 1:]:
            d = a.pose.distance(b.pose)
            if d <= radius:
                tmap.add_edge(a.id, b.id, canonical_float(d))


def region_labels(queries: list[GoldQuery]) -> tuple[str, ...]:
    for q in queries:
        if q.query.kind == "global":
            return q.gold_terms
    return ()
