"""Predicate schemas, template filling and typed entity-marker wrapping."""

import re
from dataclasses import dataclass, field
from typing import NamedTuple

import yaml

from .encoder import normalize_token, split_words
from .errors import InputError, SchemaError

NULL = "NULL"
SUBJECT_SLOT = "@subject@"
OBJECT_SLOT = "@object@"
DESCRIPTION_MAX_LEN = 64

_TYPE_NAME_RE = re.compile(r"^[A-Za-z0-9_\-]+$")


class Mention(NamedTuple):
    start: int
    end: int  # exclusive
    type: str


@dataclass
class PredicateSchema:
    predicates: list
    entity_types: list
    templates: dict = field(default_factory=dict)

    def __post_init__(self):
        problems = schema_violations(self.predicates, self.entity_types, self.templates)
        if problems:
            raise SchemaError(problems)
        self._pred_index = {p: i for i, p in enumerate(self.predicates)}

    @property
    def n_predicates(self):
        return len(self.predicates)

    def index(self, predicate):
        try:
            return self._pred_index[predicate]
        except KeyError:
            raise SchemaError(f"unknown predicate {predicate!r}") from None

    def has_predicate(self, predicate):
        return predicate in self._pred_index

    def resolve(self, predicate, subject_type, object_type):
        specific = f"{predicate}|{subject_type}|{object_type}"
        if specific in self.templates:
            return self.templates[specific]
        if predicate in self.templates:
            return self.templates[predicate]
        raise SchemaError(
            f"no template for (predicate={predicate}, subject_type={subject_type}, "
            f"object_type={object_type})"
        )

    def coverage_violations(self, type_pairs):
        """Every predicate must resolve for every (subject, object) type pair given."""
        out = []
        for st, ot in sorted(set(type_pairs)):
            for p in self.predicates:
                try:
                    self.resolve(p, st, ot)
                except SchemaError as exc:
                    out.append(str(exc))
        return out

    def to_dict(self):
        return {
            "predicates": list(self.predicates),
            "entity_types": list(self.entity_types),
            "templates": dict(self.templates),
        }

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise SchemaError("schema must be a mapping with predicates/entity_types/templates")
        missing = [k for k in ("predicates", "entity_types", "templates") if k not in data]
        if missing:
            raise SchemaError([f"schema is missing section {k!r}" for k in missing])
        # YAML reads a bare NULL as null
        predicates = [NULL if p is None else p for p in data["predicates"] or []]
        templates = {NULL if k is None else k: v for k, v in (data["templates"] or {}).items()}
        return cls(predicates, list(data["entity_types"] or []), templates)


def schema_violations(predicates, entity_types, templates):
    out = []
    if not predicates:
        out.append("predicates: list is empty")
    elif predicates[0] != NULL:
        out.append(f"predicates: index 0 must be {NULL}, found {predicates[0]!r}")
    dup = sorted({p for p in predicates if predicates.count(p) > 1})
    if dup:
        out.append(f"predicates: duplicates {dup}")
    if not entity_types:
        out.append("entity_types: list is empty")
    for t in entity_types:
        if not isinstance(t, str) or not _TYPE_NAME_RE.match(t):
            out.append(f"entity_types: invalid type name {t!r}")
    dup = sorted({t for t in entity_types if entity_types.count(t) > 1})
    if dup:
        out.append(f"entity_types: duplicates {dup}")

    pred_set, type_set = set(predicates), set(entity_types)
    described = set()
    for key, template in templates.items():
        parts = str(key).split("|")
        if len(parts) not in (1, 3):
            out.append(f"templates[{key}]: key must be PREDICATE or PREDICATE|SUBJTYPE|OBJTYPE")
            continue
        if parts[0] not in pred_set:
            out.append(f"templates[{key}]: unknown predicate {parts[0]!r}")
        for t in parts[1:]:
            if t not in type_set:
                out.append(f"templates[{key}]: unknown entity type {t!r}")
        if not isinstance(template, str):
            out.append(f"templates[{key}]: template must be a string")
            continue
        for slot in (SUBJECT_SLOT, OBJECT_SLOT):
            n = template.count(slot)
            if n != 1:
                out.append(f"templates[{key}]: {slot} must occur exactly once, found {n}")
        described.add(parts[0])
    for p in predicates:
        if p not in described:
            out.append(f"predicates: {p!r} has no template")
    return out


def load_schema(path):
    with open(path, encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise SchemaError(f"{path}: not valid YAML ({exc})") from None
    return PredicateSchema.from_dict(data)


def save_schema(schema, path):
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(schema.to_dict(), fh, sort_keys=False, allow_unicode=True)


# ---------------------------------------------------------------------------
# instance adaptation


@dataclass(frozen=True)
class FilledDescription:
    text: str
    subject_range: tuple  # character offsets [start, end)
    object_range: tuple
    predicate: str

    def __str__(self):
        return self.text

    @property
    def subject_span(self):
        return self.text[slice(*self.subject_range)]

    @property
    def object_span(self):
        return self.text[slice(*self.object_range)]


def fill_template(schema, predicate, subject_span, object_span, subject_type, object_type):
    template = schema.resolve(predicate, subject_type, object_type)
    si = template.index(SUBJECT_SLOT)
    oi = template.index(OBJECT_SLOT)
    slots = sorted(
        [(si, SUBJECT_SLOT, subject_span, "s"), (oi, OBJECT_SLOT, object_span, "o")]
    )
    pieces = []
    ranges = {}
    cursor = 0
    length = 0
    for pos, slot, span, role in slots:
        lead = template[cursor:pos]
        pieces.append(lead)
        length += len(lead)
        ranges[role] = (length, length + len(span))
        pieces.append(span)
        length += len(span)
        cursor = pos + len(slot)
    pieces.append(template[cursor:])
    return FilledDescription("".join(pieces), ranges["s"], ranges["o"], predicate)


@dataclass(frozen=True)
class MarkedSequence:
    ids: tuple
    sub_start_pos: int
    obj_start_pos: int
    sub_end_pos: int
    obj_end_pos: int
    truncated: bool = False

    def __len__(self):
        return len(self.ids)

    def marker_positions(self):
        return (self.sub_start_pos, self.sub_end_pos, self.obj_start_pos, self.obj_end_pos)


def _mark(word_ids, subject, object_, vocab, max_len):
    n = len(word_ids)
    for role, m in (("subject", subject), ("object", object_)):
        if not (0 <= m.start < m.end <= n):
            raise InputError(f"{role} span [{m.start}, {m.end}) invalid for {n} tokens")
    if subject.start < object_.end and object_.start < subject.end:
        raise InputError(
            f"subject [{subject.start}, {subject.end}) overlaps object [{object_.start}, {object_.end})"
        )

    budget = max_len - 6  # [CLS], [SEP] and four markers
    lo, hi = 0, n
    truncated = False
    if n > budget:
        first = min(subject.start, object_.start)
        last = max(subject.end, object_.end)
        if last - first > budget:
            raise InputError(
                f"marked spans need {last - first + 6} positions, more than max_len={max_len}"
            )
        lo = max(0, first - (budget - (last - first)) // 2)
        hi = min(n, lo + budget)
        lo = max(0, hi - budget)
        truncated = True

    s_open = vocab.marker_id("SUB", subject.type)
    s_close = vocab.marker_id("/SUB", subject.type)
    o_open = vocab.marker_id("OBJ", object_.type)
    o_close = vocab.marker_id("/OBJ", object_.type)
    ids = [vocab.cls_id]
    pos = {}
    for i in range(lo, hi):
        if i == subject.start:
            pos["ss"] = len(ids)
            ids.append(s_open)
        if i == object_.start:
            pos["os"] = len(ids)
            ids.append(o_open)
        ids.append(word_ids[i])
        if i == subject.end - 1:
            pos["se"] = len(ids)
            ids.append(s_close)
        if i == object_.end - 1:
            pos["oe"] = len(ids)
            ids.append(o_close)
    ids.append(vocab.sep_id)
    return MarkedSequence(tuple(ids), pos["ss"], pos["os"], pos["se"], pos["oe"], truncated)


def mark_input(tokens, subject, object_, vocab, max_len):
    """Wrap subject/object spans of a token list in typed markers, add [CLS]/[SEP]."""
    word_ids = [vocab.id(normalize_token(t)) for t in tokens]
    return _mark(word_ids, Mention(*subject), Mention(*object_), vocab, max_len)


def mark_description(filled, subject_type, object_type, vocab, max_len=DESCRIPTION_MAX_LEN):
    """Mark the inserted spans of a filled description.

    Span boundaries come from the character offsets recorded by
    ``fill_template``; the text is never searched for the spans.
    """
    cuts = sorted(
        [(filled.subject_range, "s", subject_type), (filled.object_range, "o", object_type)]
    )
    (a0, a1), _, _ = cuts[0]
    (b0, b1), _, _ = cuts[1]
    if b0 < a1:
        raise InputError("description spans overlap")
    text = filled.text
    segments = [text[:a0], text[a0:a1], text[a1:b0], text[b0:b1], text[b1:]]
    words = []
    spans = {}
    for k, seg in enumerate(segments):
        piece = split_words(seg)
        if k in (1, 3):
            if not piece:
                raise InputError(f"inserted span {seg!r} has no tokens")
            _, role, etype = cuts[(k - 1) // 2]
            spans[role] = Mention(len(words), len(words) + len(piece), etype)
        words.extend(piece)
    word_ids = [vocab.id(w) for w in words]
    return _mark(word_ids, spans["s"], spans["o"], vocab, max_len)


def strip_markers(seq):
    """Remove [CLS], [SEP] and the four markers, returning the underlying word ids."""
    drop = {0, len(seq.ids) - 1, *seq.marker_positions()}
    return [t for i, t in enumerate(seq.ids) if i not in drop]
