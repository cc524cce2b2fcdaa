"""Place gazetteer: existence checks and administrative containment."""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .model import normalize_place

PLACE_TYPES = ("city", "county", "state", "country")
_RANK = {kind: i for i, kind in enumerate(PLACE_TYPES)}


@dataclass(frozen=True)
class Place:
    name: str
    type: str
    parent: str | None = None
    population: int | None = None

    def __post_init__(self):
        if self.type not in _RANK:
            raise ValueError(f"unknown place type {self.type!r} for {self.name!r}")
        object.__setattr__(self, "name", normalize_place(self.name))
        object.__setattr__(self, "parent", normalize_place(self.parent) or None)


class Gazetteer:
    """In-memory gazetteer keyed by normalized place name.

    Parents are referenced by name. A parent name shared by several places
    is resolved to every candidate of strictly higher rank, so containment
    answers are a union over the ambiguous readings.
    """

    def __init__(self, places: Iterable[Place]):
        self.places = tuple(places)
        self._by_name: dict[str, list[Place]] = defaultdict(list)
        for place in self.places:
            self._by_name[place.name].append(place)

    @classmethod
    def from_csv(cls, path: str | Path) -> "Gazetteer":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        places = []
        for row in rows:
            pop = (row.get("population") or "").strip()
            places.append(Place(row["place"], row["type"].strip().lower(),
                                row.get("parent") or None, int(pop) if pop else None))
        return cls(places)

    def __len__(self):
        return len(self.places)

    def lookup(self, name: str) -> list[Place]:
        return list(self._by_name.get(normalize_place(name), ()))

    def knows(self, name: str | None) -> bool:
        return bool(name) and normalize_place(name) in self._by_name

    def kinds(self, name: str) -> set[str]:
        return {p.type for p in self.lookup(name)}

    def is_a(self, name: str | None, kind: str) -> bool:
        return bool(name) and kind in self.kinds(name)

    def ancestors(self, place: Place) -> set[str]:
        """Names of every place reachable through parent links."""
        seen: set[str] = set()
        frontier = [place]
        while frontier:
            current = frontier.pop()
            if not current.parent or current.parent in seen:
                continue
            seen.add(current.parent)
            frontier.extend(p for p in self._by_name.get(current.parent, ())
                            if _RANK[p.type] > _RANK[current.type])
        return seen

    def contains(self, inner: str, inner_type: str, outer: str) -> bool:
        outer = normalize_place(outer)
        return any(outer in self.ancestors(p)
                   for p in self.lookup(inner) if p.type == inner_type)

    def city_in_state(self, city: str, state: str) -> bool:
        return self.contains(city, "city", state)

    def state_in_country(self, state: str, country: str) -> bool:
        return self.contains(state, "state", country)

    def county_only(self, name: str) -> bool:
        """True when ``name`` is known as a county (with or without the suffix) but not as a state."""
        norm = normalize_place(name)
        if self.is_a(norm, "state"):
            return False
        candidates = {norm, f"{norm} county", norm.removesuffix(" county")}
        return any(self.is_a(c, "county") for c in candidates)

    def location_names(self) -> set[str]:
        return set(self._by_name)


def load_dma_table(path: str | Path) -> dict[tuple[str, str], int]:
    """Read a (city, state, dma_code) CSV into a lookup keyed by normalized names."""
    table = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            key = (normalize_place(row["city"]), normalize_place(row["state"]))
            table[key] = int(row["dma_code"])
    return table
