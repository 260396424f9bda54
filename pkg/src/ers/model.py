"""Identifiers, statements, documents, and the serialization codecs.

Entities are named by URNs of the form ``urn:ers:<path>:<local>``. All
statements one author makes about one entity live in a single Document,
which is the unit of storage and replication. Four codecs are provided:

* Model 1: one JSON object per document, predicate as key, array of values.
* Model 2: one JSON object per document, two parallel ``p``/``v`` arrays.
* Document per quad: one JSON object per (predicate, value) pair.
* N-Triples / N-Quads: one line per pair, prefix-compressed terms.

Encoders are pure and deterministic: the same document always yields the
same bytes. Inside a document, pairs are ordered by predicate
(lexicographic) and then by value insertion order.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace

from .errors import InvalidUrn, ParseError

URN_PREFIX = "urn:ers:"
DEFAULT_PATH = "ers"

# Control predicates live in Document.flags, never in properties.
FLAG_PRIVATE = "@private"
FLAG_TO = "@to"
FLAG_CACHED = "@cachedQuery"
RESERVED_PREDICATES = frozenset({FLAG_PRIVATE, FLAG_TO, FLAG_CACHED})

# Prefix table for the N-Quads subset. "ers:" compresses entity ids under
# the default path; "ers-prop:" carries bare predicate tokens.
ENTITY_PREFIX = "ers"
PREDICATE_PREFIX = "ers-prop"
PREDICATE_NAMESPACE = "urn:ers-prop:"

LITERAL = "literal"
REFERENCE = "reference"


def _check_token(token: str, what: str) -> None:
    if not token:
        raise InvalidUrn(f"{what} must be non-empty")
    if any(c.isspace() for c in token):
        raise InvalidUrn(f"{what} must not contain whitespace: {token!r}")
    if ":" in token:
        raise InvalidUrn(f"{what} must not contain ':': {token!r}")


@dataclass(frozen=True, slots=True)
class EntityId:
    """URN-based entity identifier with canonical form urn:ers:<path>:<local>."""

    path: str
    local: str

    def __post_init__(self):
        _check_token(self.path, "path")
        _check_token(self.local, "local")

    @property
    def canonical(self) -> str:
        return f"{URN_PREFIX}{self.path}:{self.local}"

    def compact(self) -> str:
        """Prefix-compressed term form, e.g. ``ers:message1``."""
        if self.path == DEFAULT_PATH:
            return f"{ENTITY_PREFIX}:{self.local}"
        return self.canonical

    def id_part(self) -> str:
        """Document-id form: bare local name under the default path."""
        if self.path == DEFAULT_PATH:
            return self.local
        return self.canonical

    def __str__(self) -> str:
        return self.canonical


def mint_entity_id(path: str, local: str) -> EntityId:
    """Build an EntityId from its two token segments."""
    return EntityId(path, local)


def parse_entity_id(text: str) -> EntityId:
    """Inverse of canonicalization: parse ``urn:ers:<path>:<local>``."""
    if not text.startswith(URN_PREFIX):
        raise InvalidUrn(f"not an entity urn: {text!r}")
    rest = text[len(URN_PREFIX):]
    parts = rest.split(":")
    if len(parts) != 2:
        raise InvalidUrn(f"expected urn:ers:<path>:<local>, got {text!r}")
    return EntityId(parts[0], parts[1])


@dataclass(frozen=True, slots=True)
class GraphId:
    """Identity of one contribution graph; exactly one author per graph."""

    author: str

    def __post_init__(self):
        _check_token(self.author, "graph author")


@dataclass(frozen=True, slots=True)
class Value:
    """Object of a statement: a literal string or an entity reference."""

    kind: str
    text: str

    def __post_init__(self):
        if self.kind not in (LITERAL, REFERENCE):
            raise ValueError(f"unknown value kind: {self.kind!r}")
        if self.kind == REFERENCE:
            parse_entity_id(self.text)

    @classmethod
    def literal(cls, text: str) -> "Value":
        return cls(LITERAL, text)

    @classmethod
    def reference(cls, target: "EntityId | str") -> "Value":
        if isinstance(target, EntityId):
            return cls(REFERENCE, target.canonical)
        return cls(REFERENCE, parse_entity_id(target).canonical)

    @property
    def is_reference(self) -> bool:
        return self.kind == REFERENCE


@dataclass(frozen=True, slots=True)
class Quad:
    """A single (subject, predicate, object, graph) statement."""

    subject: EntityId
    predicate: str
    obj: Value
    graph: GraphId

    def __post_init__(self):
        if not self.predicate or any(c.isspace() for c in self.predicate):
            raise ValueError(f"bad predicate token: {self.predicate!r}")


@dataclass(frozen=True, slots=True)
class Flags:
    """Control state of a document, kept outside the property map."""

    private: bool = False
    addressed_to: str | None = None
    cached_query: bool = False


@dataclass(frozen=True)
class Document:
    """All statements one author made about one entity.

    Treat instances as immutable; the ``with_*`` helpers return modified
    copies. ``properties`` maps predicate to the values in insertion
    order with set semantics per (predicate, value) pair.
    """

    entity: EntityId
    graph: GraphId
    properties: dict[str, tuple[Value, ...]] = field(default_factory=dict)
    flags: Flags = Flags()
    revision: int = 0

    def __post_init__(self):
        norm: dict[str, tuple[Value, ...]] = {}
        for pred, values in self.properties.items():
            if pred in RESERVED_PREDICATES or pred.startswith("@"):
                raise ValueError(f"control predicate in properties: {pred!r}")
            if not pred or any(c.isspace() for c in pred):
                raise ValueError(f"bad predicate token: {pred!r}")
            norm[pred] = tuple(values)
        object.__setattr__(self, "properties", norm)
        if self.revision < 0:
            raise ValueError("revision must be non-negative")

    @property
    def doc_id(self) -> str:
        return f"{self.entity.id_part()} {self.graph.author}"

    def has_pair(self, predicate: str, value: Value) -> bool:
        return value in self.properties.get(predicate, ())

    def with_value(self, predicate: str, value: Value) -> "Document":
        """Append a value under a predicate (no-op when the pair exists)."""
        if self.has_pair(predicate, value):
            return self
        props = dict(self.properties)
        props[predicate] = props.get(predicate, ()) + (value,)
        return replace(self, properties=props, revision=self.revision + 1)

    def with_flags(self, flags: Flags) -> "Document":
        return replace(self, flags=flags, revision=self.revision + 1)

    def data_pairs(self) -> list[tuple[str, Value]]:
        """Property pairs in canonical order, control pairs excluded."""
        out: list[tuple[str, Value]] = []
        for pred in sorted(self.properties):
            for value in self.properties[pred]:
                out.append((pred, value))
        return out

    def flag_pairs(self) -> list[tuple[str, Value]]:
        out: list[tuple[str, Value]] = []
        if self.flags.cached_query:
            out.append((FLAG_CACHED, Value.literal("true")))
        if self.flags.private:
            out.append((FLAG_PRIVATE, Value.literal("true")))
        if self.flags.addressed_to is not None:
            out.append((FLAG_TO, Value.literal(self.flags.addressed_to)))
        return out

    def pairs(self) -> list[tuple[str, Value]]:
        """All serialized pairs: control pairs and data pairs, merged in
        predicate order (``@`` keys sort with the rest)."""
        merged = self.flag_pairs() + self.data_pairs()
        merged.sort(key=lambda pv: pv[0])
        return merged


# ---------------------------------------------------------------------------
# Term rendering and recognition shared by the codecs


def _render_value(value: Value) -> str:
    if value.is_reference:
        return parse_entity_id(value.text).compact()
    return value.text


def _discriminate(text: str) -> Value:
    # A string is a reference iff it is a canonical urn or a known prefix
    # form; everything else is a literal.
    if text.startswith(URN_PREFIX):
        try:
            return Value.reference(parse_entity_id(text))
        except InvalidUrn:
            return Value.literal(text)
    if text.startswith(f"{ENTITY_PREFIX}:"):
        local = text[len(ENTITY_PREFIX) + 1:]
        try:
            return Value.reference(EntityId(DEFAULT_PATH, local))
        except InvalidUrn:
            return Value.literal(text)
    return Value.literal(text)


def _entity_from_id_part(part: str) -> EntityId:
    if part.startswith(URN_PREFIX):
        return parse_entity_id(part)
    return EntityId(DEFAULT_PATH, part)


def _split_doc_id(doc_id: str) -> tuple[EntityId, GraphId]:
    pieces = doc_id.rsplit(" ", 1)
    if len(pieces) != 2:
        raise InvalidUrn(f"malformed document id: {doc_id!r}")
    return _entity_from_id_part(pieces[0]), GraphId(pieces[1])


def _dumps(obj: dict) -> bytes:
    # One space after ':' and ',', nothing else; fixed policy keeps the
    # size benchmark stable.
    return json.dumps(obj, ensure_ascii=False, separators=(", ", ": ")).encode("utf-8")


# ---------------------------------------------------------------------------
# Codecs


def encode_model1(doc: Document) -> bytes:
    """Predicate-as-key JSON object, ``_id`` first, predicates sorted."""
    obj: dict[str, object] = {"_id": doc.doc_id}
    grouped: dict[str, list[str]] = {}
    for pred, value in doc.pairs():
        grouped.setdefault(pred, []).append(_render_value(value))
    for pred in sorted(grouped):
        obj[pred] = grouped[pred]
    return _dumps(obj)


def decode_model1(data: bytes) -> Document:
    obj = json.loads(data.decode("utf-8"))
    entity, graph = _split_doc_id(obj.pop("_id"))
    properties: dict[str, list[Value]] = {}
    flags = Flags()
    for pred, values in obj.items():
        decoded = [_discriminate(v) for v in values]
        flags, rest = _fold_control(pred, decoded, flags)
        if rest:
            properties[pred] = rest
    return Document(entity, graph, {p: tuple(v) for p, v in properties.items()}, flags)


def encode_model2(doc: Document) -> bytes:
    """Two synchronized arrays of predicates and values."""
    preds: list[str] = []
    values: list[str] = []
    for pred, value in doc.pairs():
        preds.append(pred)
        values.append(_render_value(value))
    return _dumps({"_id": doc.doc_id, "p": preds, "v": values})


def decode_model2(data: bytes) -> Document:
    obj = json.loads(data.decode("utf-8"))
    entity, graph = _split_doc_id(obj["_id"])
    if len(obj["p"]) != len(obj["v"]):
        raise InvalidUrn("model 2 arrays differ in length")
    properties: dict[str, list[Value]] = {}
    flags = Flags()
    for pred, raw in zip(obj["p"], obj["v"]):
        flags, rest = _fold_control(pred, [_discriminate(raw)], flags)
        if rest:
            properties.setdefault(pred, []).extend(rest)
    return Document(entity, graph, {p: tuple(v) for p, v in properties.items()}, flags)


def _fold_control(
    pred: str, values: list[Value], flags: Flags
) -> tuple[Flags, list[Value]]:
    if pred == FLAG_PRIVATE:
        return replace(flags, private=True), []
    if pred == FLAG_CACHED:
        return replace(flags, cached_query=True), []
    if pred == FLAG_TO:
        return replace(flags, addressed_to=values[0].text), []
    return flags, values


def encode_per_quad(doc: Document) -> list[bytes]:
    """One JSON object per (predicate, value) pair.

    Each object is a standalone row, so terms are self-contained: the
    subject and reference values use canonical urns, not prefix forms.
    """
    out: list[bytes] = []
    for ordinal, (pred, value) in enumerate(doc.pairs()):
        out.append(
            _dumps(
                {
                    "_id": f"{doc.doc_id}#{ordinal:04d}",
                    "subject": doc.entity.canonical,
                    "predicate": pred,
                    "value": value.text,
                    "graph": f"{ENTITY_PREFIX}:{doc.graph.author}",
                }
            )
        )
    return out


def _entity_term_text(entity: EntityId) -> str:
    # Bare prefix form under the default path, bracketed urn otherwise.
    if entity.path == DEFAULT_PATH:
        return entity.compact()
    return f"<{entity.canonical}>"


def _render_object_term(value: Value) -> str:
    if value.is_reference:
        return _entity_term_text(parse_entity_id(value.text))
    escaped = value.text.replace("\\", "\\\\").replace('"', '\\"')
    return f'"{escaped}"'


def encode_ntriples(docs: list[Document]) -> bytes:
    """One ``<s> <p> <o> .`` line per pair, documents ordered by id."""
    lines: list[str] = []
    for doc in sorted(docs, key=lambda d: d.doc_id):
        subject = _entity_term_text(doc.entity)
        for pred, value in doc.pairs():
            lines.append(
                f"{subject} {PREDICATE_PREFIX}:{pred} {_render_object_term(value)} ."
            )
    return ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8")


def encode_nquads(docs: list[Document]) -> bytes:
    """N-Triples plus the graph term, used for registry exports."""
    lines: list[str] = []
    for doc in sorted(docs, key=lambda d: d.doc_id):
        subject = _entity_term_text(doc.entity)
        graph = _entity_term_text(EntityId(DEFAULT_PATH, doc.graph.author))
        for pred, value in doc.pairs():
            lines.append(
                f"{subject} {PREDICATE_PREFIX}:{pred} "
                f"{_render_object_term(value)} {graph} ."
            )
    return ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8")


# ---------------------------------------------------------------------------
# N-Quads subset parser

_BARE_END = " \t"


def _scan_term(line: str, pos: int, lineno: int) -> tuple[str, str, int]:
    """Return (kind, text, next_pos); kind is 'iri', 'literal' or 'bare'."""
    while pos < len(line) and line[pos] in _BARE_END:
        pos += 1
    if pos >= len(line):
        raise ParseError("unexpected end of line", lineno)
    ch = line[pos]
    if ch == "<":
        end = line.find(">", pos + 1)
        if end < 0:
            raise ParseError("unterminated '<' term", lineno)
        return "iri", line[pos + 1:end], end + 1
    if ch == '"':
        out: list[str] = []
        i = pos + 1
        while i < len(line):
            c = line[i]
            if c == "\\":
                if i + 1 >= len(line) or line[i + 1] not in ('"', "\\"):
                    raise ParseError("bad escape in literal", lineno)
                out.append(line[i + 1])
                i += 2
                continue
            if c == '"':
                return "literal", "".join(out), i + 1
            out.append(c)
            i += 1
        raise ParseError("unterminated literal", lineno)
    end = pos
    while end < len(line) and line[end] not in _BARE_END:
        end += 1
    return "bare", line[pos:end], end


def _entity_term(kind: str, text: str, lineno: int) -> EntityId:
    if kind == "literal":
        raise ParseError("literal where an entity term is required", lineno)
    if kind == "iri":
        try:
            return parse_entity_id(text)
        except InvalidUrn as exc:
            raise ParseError(str(exc), lineno) from exc
    prefix, _, local = text.partition(":")
    if not local or prefix != ENTITY_PREFIX:
        raise ParseError(f"unknown term {text!r}", lineno)
    try:
        return EntityId(DEFAULT_PATH, local)
    except InvalidUrn as exc:
        raise ParseError(str(exc), lineno) from exc


def _predicate_term(kind: str, text: str, lineno: int) -> str:
    if kind == "literal":
        raise ParseError("literal where a predicate is required", lineno)
    if kind == "iri":
        token = text[len(PREDICATE_NAMESPACE):] if text.startswith(PREDICATE_NAMESPACE) else text
    else:
        prefix, _, local = text.partition(":")
        if not local or prefix != PREDICATE_PREFIX:
            raise ParseError(f"unknown predicate term {text!r}", lineno)
        token = local
    if not token or any(c.isspace() for c in token):
        raise ParseError(f"bad predicate token {token!r}", lineno)
    return token


def _object_term(kind: str, text: str, lineno: int) -> Value:
    if kind == "literal":
        return Value.literal(text)
    return Value.reference(_entity_term(kind, text, lineno))


def parse_nquads(data: bytes | str) -> list[Quad]:
    """Parse the N-Quads subset: 4 terms plus ``.``, ``#`` comments allowed."""
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    quads: list[Quad] = []
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        pos = 0
        kind, term, pos = _scan_term(line, pos, lineno)
        subject = _entity_term(kind, term, lineno)
        kind, term, pos = _scan_term(line, pos, lineno)
        predicate = _predicate_term(kind, term, lineno)
        kind, term, pos = _scan_term(line, pos, lineno)
        obj = _object_term(kind, term, lineno)
        kind, term, pos = _scan_term(line, pos, lineno)
        graph = GraphId(_entity_term(kind, term, lineno).local)
        kind, term, pos = _scan_term(line, pos, lineno)
        if kind != "bare" or term != ".":
            raise ParseError("expected '.' terminator", lineno)
        if line[pos:].strip():
            raise ParseError("trailing content after '.'", lineno)
        quads.append(Quad(subject, predicate, obj, graph))
    return quads


def docs_from_quads(quads: list[Quad]) -> list[Document]:
    """Group quads into one Document per (entity, graph); control
    predicates fold into flags."""
    grouped: dict[tuple[str, str], Document] = {}
    for quad in quads:
        key = (quad.subject.canonical, quad.graph.author)
        doc = grouped.get(key)
        if doc is None:
            doc = Document(quad.subject, quad.graph)
        if quad.predicate == FLAG_PRIVATE:
            doc = replace(doc, flags=replace(doc.flags, private=True))
        elif quad.predicate == FLAG_CACHED:
            doc = replace(doc, flags=replace(doc.flags, cached_query=True))
        elif quad.predicate == FLAG_TO:
            doc = replace(doc, flags=replace(doc.flags, addressed_to=quad.obj.text))
        else:
            doc = doc.with_value(quad.predicate, quad.obj)
        grouped[key] = doc
    return list(grouped.values())


def quads_from_doc(doc: Document) -> list[Quad]:
    out = []
    for pred, value in doc.data_pairs():
        out.append(Quad(doc.entity, pred, value, doc.graph))
    return out


# ---------------------------------------------------------------------------
# Synthetic corpus

_CORPUS_PREDICATES = (
    "title", "creator", "subject", "abstract", "published", "language",
    "publisher", "edition", "series", "keyword", "summary", "origin",
    "format", "rights",
)

_CORPUS_WORDS = (
    "registry", "village", "notebook", "harvest", "lantern", "monsoon",
    "granite", "whisper", "orchard", "compass", "meadow", "signal",
    "timber", "archive", "pupil", "satchel", "horizon", "pottery",
    "bicycle", "festival", "library", "paraffin", "sunrise", "market",
    "teacher", "journey", "mountain", "seedling", "current", "memory",
    "station", "net", "garden", "chalk", "riverbed", "letter",
)

_CORPUS_BLOCK = 100  # entities per contribution graph


def gen_corpus(n_entities: int, seed: int) -> list[Document]:
    """Deterministic synthetic corpus: 8-12 properties per entity, mixed
    literals and references, one graph per block of entities."""
    if n_entities < 1:
        raise ValueError("n_entities must be >= 1")
    rng = random.Random(seed)
    docs: list[Document] = []
    for i in range(n_entities):
        entity = EntityId(DEFAULT_PATH, f"e{i}")
        graph = GraphId(f"node{i // _CORPUS_BLOCK}")
        doc = Document(entity, graph)
        # Predicates sampled without replacement: one value per predicate.
        for pred in rng.sample(_CORPUS_PREDICATES, rng.randint(8, 12)):
            if rng.random() < 0.12:
                target = EntityId(DEFAULT_PATH, f"e{rng.randrange(n_entities)}")
                value = Value.reference(target)
            else:
                words = rng.choices(_CORPUS_WORDS, k=rng.randint(8, 13))
                value = Value.literal(" ".join(words))
            doc = doc.with_value(pred, value)
        docs.append(doc)
    return docs
