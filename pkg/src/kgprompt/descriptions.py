"""Fine-grained triple descriptions from a language model, cached on disk.

Descriptions are produced once per triple and frozen in a JSON cache so that
training and evaluation never need network access.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import requests

from .errors import EmptyResponse, IOFailure, MalformedFile, NetworkError, UnparseableResponse
from .kg_store import KnowledgeGraph, Triple, query_category

log = logging.getLogger(__name__)

MAX_DESCRIPTION_WORDS = 30
TOKEN_ENV = "KGPROMPT_LLM_TOKEN"
QUESTION_TEMPLATE = (
    "In 3D mask face presentation attack detection, please analyze the sentence "
    "[{head}][{relation}][{tail}] in 30 words or less."
)


@dataclass(frozen=True)
class TripleDescription:
    triple_key: str
    category: str
    text: str


def truncate_words(text: str, limit: int = MAX_DESCRIPTION_WORDS) -> str:
    words = text.split()
    return " ".join(words[:limit])


def render_question(t: Triple, g: KnowledgeGraph | None = None) -> str:
    """Fill the question template with the triple's surface text.

    With a graph, entity ids are resolved to their text; without one the
    triple fields are used as given.
    """
    head, tail = t.head, t.tail
    if g is not None:
        head, tail = g.entity(t.head).text, g.entity(t.tail).text
    return QUESTION_TEMPLATE.format(head=head.strip(), relation=t.relation.strip(), tail=tail.strip())


class DescriptionCache:
    """Mapping triple_key -> description text, plus the category it was made for."""

    def __init__(self, entries: dict[str, TripleDescription] | None = None):
        self._entries: dict[str, TripleDescription] = dict(entries or {})

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other) -> bool:
        return isinstance(other, DescriptionCache) and self._entries == other._entries

    def get(self, key: str) -> TripleDescription | None:
        return self._entries.get(key)

    def put(self, desc: TripleDescription) -> None:
        self._entries[desc.triple_key] = desc

    def keys(self) -> list[str]:
        return sorted(self._entries)

    def to_bytes(self) -> bytes:
        doc = {
            "version": 1,
            "entries": {
                k: {"category": self._entries[k].category, "text": self._entries[k].text}
                for k in self.keys()
            },
        }
        return (json.dumps(doc, indent=2, ensure_ascii=False) + "\n").encode("utf-8")

    @classmethod
    def from_bytes(cls, raw: bytes) -> "DescriptionCache":
        try:
            doc = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise MalformedFile(f"description cache is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict) or not isinstance(doc.get("entries"), dict):
            raise MalformedFile("description cache lacks an 'entries' object")
        entries = {}
        for key, obj in doc["entries"].items():
            if (not isinstance(obj, dict) or not isinstance(obj.get("text"), str)
                    or not isinstance(obj.get("category"), str) or not obj["text"].strip()):
                raise MalformedFile(f"cache entry {key!r} is malformed")
            if key.count("|") != 2:
                raise MalformedFile(f"cache key {key!r} is not head|relation|tail")
            entries[key] = TripleDescription(key, obj["category"], obj["text"])
        return cls(entries)


def load_cache(path) -> DescriptionCache:
    p = Path(path)
    if not p.exists():
        return DescriptionCache()
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise IOFailure(f"cannot read description cache {path}: {exc}") from exc
    return DescriptionCache.from_bytes(raw)


def save_cache(cache: DescriptionCache, path) -> None:
    Path(path).write_bytes(cache.to_bytes())


def maskpad_descriptions() -> DescriptionCache:
    raw = resources.files("kgprompt").joinpath("data/maskpad_descriptions.json").read_bytes()
    return DescriptionCache.from_bytes(raw)


def _first_text(payload) -> str | None:
    """Pull the first text field out of a chat-completion style response."""
    if isinstance(payload, str):
        return payload
    if isinstance(payload, dict):
        choices = payload.get("choices")
        if isinstance(choices, list) and choices:
            first = choices[0]
            if isinstance(first, dict):
                msg = first.get("message")
                if isinstance(msg, dict) and isinstance(msg.get("content"), str):
                    return msg["content"]
                if isinstance(first.get("text"), str):
                    return first["text"]
        for key in ("text", "content", "output", "response"):
            if isinstance(payload.get(key), str):
                return payload[key]
    return None


class LLMClient:
    """Chat-completion style HTTP client (endpoint from `llm_url`)."""

    def __init__(self, url: str, session=None, timeout: float = 30.0, model: str | None = None):
        if not url:
            raise NetworkError("llm_url is not configured")
        self.url = url
        self.session = session or requests.Session()
        self.timeout = timeout
        self.model = model

    def ask(self, question: str) -> str:
        body = {"messages": [{"role": "user", "content": question}]}
        if self.model:
            body["model"] = self.model
        headers = {}
        token = os.environ.get(TOKEN_ENV)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        try:
            resp = self.session.post(self.url, json=body, headers=headers, timeout=self.timeout)
            resp.raise_for_status()
            payload = resp.json()
        except requests.RequestException as exc:
            raise NetworkError(f"LLM request failed: {exc}") from exc
        except ValueError as exc:
            raise UnparseableResponse(f"LLM response is not JSON: {exc}") from exc
        text = _first_text(payload)
        if text is None:
            raise UnparseableResponse("no text field in LLM response")
        if not text.strip():
            raise EmptyResponse("LLM returned an empty description")
        return text.strip()


def generate_descriptions(g: KnowledgeGraph, category: str, client, cache: DescriptionCache,
                          workers: int = 1) -> list[TripleDescription]:
    """One description per triple of `category`, in canonical triple order.

    Cached triples never touch the client. Misses are asked concurrently when
    `workers > 1` but written to the cache in canonical order.
    """
    _, triples = query_category(g, category)
    missing = [t for t in triples if t.key not in cache]
    if missing:
        if client is None:
            raise NetworkError(f"{len(missing)} triples of {category!r} are not cached and no LLM client is configured")
        questions = [render_question(t, g) for t in missing]
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                answers = list(pool.map(client.ask, questions))
        else:
            answers = [client.ask(q) for q in questions]
        for t, answer in zip(missing, answers):
            text = truncate_words(answer)
            if not text:
                raise EmptyResponse(f"empty description for {t.key}")
            cache.put(TripleDescription(t.key, category, text))
        log.info("generated %d new descriptions for %s", len(missing), category)
    return [TripleDescription(t.key, category, cache.get(t.key).text) for t in triples]
