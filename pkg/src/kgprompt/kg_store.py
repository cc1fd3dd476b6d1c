"""Task knowledge graph: data model, canonical JSON I/O and category queries."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import requests

from .errors import (
    DanglingReference,
    EmptyCategory,
    IOFailure,
    MalformedFile,
    NetworkError,
    UnknownCategory,
    UnparseableResponse,
)

DIMENSIONS = ("category_related_term", "symbolic_meaning", "inherent_characteristic")
MAX_ENTITY_WORDS = 8

_TOP_KEYS = ("categories", "relations", "entities", "triples")
_ENTITY_KEYS = ("id", "text", "dimension", "category")
_TRIPLE_KEYS = ("head", "relation", "tail")


@dataclass(frozen=True, order=True)
class Entity:
    id: str
    text: str
    dimension: str
    category: str
    # placeholder entities not named in the source material
    reconstructed: bool = False


@dataclass(frozen=True, order=True)
class Triple:
    head: str
    relation: str
    tail: str

    @property
    def key(self) -> str:
        return f"{self.head}|{self.relation}|{self.tail}"


@dataclass(frozen=True)
class KnowledgeGraph:
    """Immutable, validated knowledge graph.

    All collections are stored in canonical order (sorted), so two graphs
    built from the same content compare equal regardless of input order.
    """

    categories: tuple[str, ...]
    relations: tuple[str, ...]
    entities: tuple[Entity, ...]
    triples: tuple[Triple, ...]
    _by_id: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "categories", tuple(sorted(self.categories)))
        object.__setattr__(self, "relations", tuple(sorted(self.relations)))
        object.__setattr__(self, "entities", tuple(sorted(self.entities, key=lambda e: e.id)))
        object.__setattr__(self, "triples", tuple(sorted(self.triples)))
        object.__setattr__(self, "_by_id", {e.id: e for e in self.entities})
        self._validate()

    def _validate(self):
        if len(set(self.categories)) != len(self.categories):
            raise MalformedFile("duplicate category names")
        if len(self.categories) < 2:
            raise MalformedFile("a graph needs at least two categories")
        if len(set(self.relations)) != len(self.relations):
            raise MalformedFile("duplicate relation labels")
        if len(self._by_id) != len(self.entities):
            seen, dup = set(), []
            for e in self.entities:
                if e.id in seen:
                    dup.append(e.id)
                seen.add(e.id)
            raise MalformedFile(f"duplicate entity ids: {sorted(set(dup))}")
        for e in self.entities:
            words = e.text.split()
            if not words or len(words) > MAX_ENTITY_WORDS:
                raise MalformedFile(
                    f"entity {e.id!r}: text must have 1..{MAX_ENTITY_WORDS} words, got {len(words)}"
                )
            if e.dimension not in DIMENSIONS:
                raise MalformedFile(f"entity {e.id!r}: unknown dimension {e.dimension!r}")
            if e.category not in self.categories:
                raise MalformedFile(f"entity {e.id!r}: unknown category {e.category!r}")
        if len(set(self.triples)) != len(self.triples):
            raise MalformedFile("duplicate triples")
        for t in self.triples:
            for end in (t.head, t.tail):
                if end not in self._by_id:
                    raise DanglingReference(f"triple {t.key!r} references unknown entity {end!r}")
            if t.relation not in self.relations:
                raise MalformedFile(f"triple {t.key!r} uses unknown relation {t.relation!r}")
        for c in self.categories:
            if not any(e.category == c for e in self.entities):
                raise EmptyCategory(f"category {c!r} has no entities")

    def entity(self, entity_id: str) -> Entity:
        return self._by_id[entity_id]

    @property
    def counts(self) -> tuple[int, int, int]:
        """(entities, relations, triples)."""
        return len(self.entities), len(self.relations), len(self.triples)


def is_category_node(e: Entity) -> bool:
    """True for the entity that stands for its category name itself."""
    return e.text == e.category


def _require_keys(obj, required: Sequence[str], optional: Sequence[str], where: str):
    if not isinstance(obj, dict):
        raise MalformedFile(f"{where}: expected an object")
    missing = [k for k in required if k not in obj]
    if missing:
        raise MalformedFile(f"{where}: missing keys {missing}")
    extra = sorted(set(obj) - set(required) - set(optional))
    if extra:
        raise MalformedFile(f"{where}: unexpected keys {extra}")


def _str_list(obj, where: str) -> list[str]:
    if not isinstance(obj, list) or not all(isinstance(x, str) for x in obj):
        raise MalformedFile(f"{where}: expected an array of strings")
    return obj


def parse_kg(data: bytes | str) -> KnowledgeGraph:
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedFile(f"not UTF-8: {exc}") from exc
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"invalid JSON: {exc}") from exc
    _require_keys(doc, _TOP_KEYS, (), "graph")

    entities = []
    for i, obj in enumerate(doc["entities"] if isinstance(doc["entities"], list) else [None]):
        _require_keys(obj, _ENTITY_KEYS, ("reconstructed",), f"entities[{i}]")
        if not all(isinstance(obj[k], str) for k in _ENTITY_KEYS):
            raise MalformedFile(f"entities[{i}]: fields must be strings")
        entities.append(Entity(obj["id"], obj["text"], obj["dimension"], obj["category"],
                               bool(obj.get("reconstructed", False))))
    triples = []
    for i, obj in enumerate(doc["triples"] if isinstance(doc["triples"], list) else [None]):
        _require_keys(obj, _TRIPLE_KEYS, (), f"triples[{i}]")
        if not all(isinstance(obj[k], str) for k in _TRIPLE_KEYS):
            raise MalformedFile(f"triples[{i}]: fields must be strings")
        triples.append(Triple(obj["head"], obj["relation"], obj["tail"]))
    return KnowledgeGraph(
        categories=tuple(_str_list(doc["categories"], "categories")),
        relations=tuple(_str_list(doc["relations"], "relations")),
        entities=tuple(entities),
        triples=tuple(triples),
    )


def serialize_kg(g: KnowledgeGraph) -> bytes:
    entities = []
    for e in g.entities:
        obj = {"id": e.id, "text": e.text, "dimension": e.dimension, "category": e.category}
        if e.reconstructed:
            obj["reconstructed"] = True
        entities.append(obj)
    doc = {
        "categories": list(g.categories),
        "relations": list(g.relations),
        "entities": entities,
        "triples": [{"head": t.head, "relation": t.relation, "tail": t.tail} for t in g.triples],
    }
    return (json.dumps(doc, indent=2, ensure_ascii=False) + "\n").encode("utf-8")


def load_kg(path) -> KnowledgeGraph:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IOFailure(f"cannot read knowledge graph {path}: {exc}") from exc
    return parse_kg(raw)


def save_kg(g: KnowledgeGraph, path) -> None:
    Path(path).write_bytes(serialize_kg(g))


def maskpad_kg() -> KnowledgeGraph:
    """The bundled MaskPAD-KG fixture (real face / 3D mask)."""
    raw = resources.files("kgprompt").joinpath("data/maskpad_kg.json").read_bytes()
    return parse_kg(raw)


def query_category(g: KnowledgeGraph, category: str) -> tuple[list[Entity], list[Triple]]:
    """Entities and triples attached to `category`, in canonical order.

    The entity standing for the category name itself is left out: the class
    name already opens every prompt, so repeating it would only duplicate a row.
    """
    if category not in g.categories:
        raise UnknownCategory(f"unknown category {category!r}; known: {list(g.categories)}")
    entities = [e for e in g.entities if e.category == category and not is_category_node(e)]
    anchored = {e.id for e in g.entities if e.category == category}
    triples = [t for t in g.triples if t.head in anchored or t.tail in anchored]
    return entities, triples


# -- public knowledge graph retrieval ----------------------------------------

@dataclass(frozen=True)
class Candidate:
    """A raw edge retrieved from a public graph; curated by hand, never merged."""

    head: str
    relation: str
    tail: str
    weight: float | None = None


def _edge_label(value) -> str | None:
    # ConceptNet style edges nest labels as {"label": ...}
    if isinstance(value, dict):
        value = value.get("label")
    return value if isinstance(value, str) and value else None


def _parse_edges(payload) -> list[Candidate]:
    if not isinstance(payload, dict) or not isinstance(payload.get("edges"), list):
        raise UnparseableResponse("response has no 'edges' array")
    out = []
    for i, edge in enumerate(payload["edges"]):
        if not isinstance(edge, dict):
            raise UnparseableResponse(f"edge {i} is not an object")
        head = _edge_label(edge.get("head", edge.get("start")))
        rel = _edge_label(edge.get("relation", edge.get("rel")))
        tail = _edge_label(edge.get("tail", edge.get("end")))
        if head is None or rel is None or tail is None:
            raise UnparseableResponse(f"edge {i} lacks head/relation/tail")
        weight = edge.get("weight")
        out.append(Candidate(head, rel, tail, float(weight) if weight is not None else None))
    return out


class KGSourceClient:
    """HTTP client for a public knowledge graph (configured by `kg_source_url`)."""

    def __init__(self, base_url: str, session=None, timeout: float = 10.0):
        if not base_url:
            raise NetworkError("kg_source_url is not configured")
        self.base_url = base_url
        self.session = session or requests.Session()
        self.timeout = timeout

    def query(self, term: str) -> dict:
        try:
            resp = self.session.get(self.base_url, params={"q": term}, timeout=self.timeout)
            resp.raise_for_status()
        except requests.RequestException as exc:
            raise NetworkError(f"query for {term!r} failed: {exc}") from exc
        try:
            return resp.json()
        except ValueError as exc:
            raise UnparseableResponse(f"response is not JSON: {exc}") from exc


def fetch_subgraph(client: KGSourceClient, category: str) -> list[Candidate]:
    """Retrieve candidate edges for `category` for manual inspection.

    The graph is never modified here; accepted candidates must be added to the
    graph file by hand.
    """
    return _parse_edges(client.query(category))


def save_candidates(candidates: Iterable[Candidate], path) -> None:
    rows = [
        {"head": c.head, "relation": c.relation, "tail": c.tail, "weight": c.weight}
        for c in candidates
    ]
    Path(path).write_text(json.dumps({"candidates": rows}, indent=2, ensure_ascii=False) + "\n",
                          encoding="utf-8")
