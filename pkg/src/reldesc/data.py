"""JSONL relation datasets, candidate-pair generation and batch assembly."""

import json
from dataclasses import dataclass

import numpy as np

from .errors import DatasetError, InputError, SchemaError
from .schema import (
    DESCRIPTION_MAX_LEN,
    NULL,
    Mention,
    fill_template,
    mark_description,
    mark_input,
)


@dataclass(frozen=True)
class REInstance:
    id: str
    tokens: tuple
    mentions: tuple  # of Mention
    gold: tuple  # of (subject_index, object_index, predicate)

    def span_text(self, mention_index):
        m = self.mentions[mention_index]
        return " ".join(self.tokens[m.start:m.end])

    def to_json(self):
        return {
            "id": self.id,
            "tokens": list(self.tokens),
            "mentions": [[m.start, m.end, m.type] for m in self.mentions],
            "relations": [[s, o, p] for s, o, p in self.gold],
        }


@dataclass(frozen=True)
class CandidatePair:
    instance_id: str
    subject: int
    object: int
    label: str


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def instance_from_obj(obj, schema=None, where="record"):
    """Build an REInstance from a decoded JSON object, collecting every problem."""
    problems = []
    if not isinstance(obj, dict):
        return None, [f"{where}: expected a JSON object"]
    for key in ("id", "tokens", "mentions", "relations"):
        if key not in obj:
            problems.append(f"{where}: missing field {key!r}")
    if problems:
        return None, problems
    iid, tokens, mentions, relations = obj["id"], obj["tokens"], obj["mentions"], obj["relations"]
    if not isinstance(iid, str):
        problems.append(f"{where}: id must be a string")
    if not isinstance(tokens, list) or not all(isinstance(t, str) and t for t in tokens):
        problems.append(f"{where}: tokens must be a list of non-empty strings")
        tokens = []
    if not isinstance(mentions, list):
        problems.append(f"{where}: mentions must be a list")
        mentions = []
    if not isinstance(relations, list):
        problems.append(f"{where}: relations must be a list")
        relations = []

    ms = []
    for k, m in enumerate(mentions):
        if not (isinstance(m, list) and len(m) == 3 and _is_int(m[0]) and _is_int(m[1])
                and isinstance(m[2], str)):
            problems.append(f"{where}: mention {k} must be [start, end, TYPE]")
            continue
        start, end, etype = m
        if not (0 <= start < end <= len(tokens)):
            problems.append(
                f"{where}: mention {k} span [{start}, {end}) out of range for {len(tokens)} tokens"
            )
        if schema is not None and etype not in schema.entity_types:
            problems.append(f"{where}: mention {k} has unknown entity type {etype!r}")
        ms.append(Mention(start, end, etype))

    gold = []
    seen = set()
    for k, r in enumerate(relations):
        if not (isinstance(r, list) and len(r) == 3 and _is_int(r[0]) and _is_int(r[1])
                and isinstance(r[2], str)):
            problems.append(f"{where}: relation {k} must be [subj_idx, obj_idx, PREDICATE]")
            continue
        s, o, pred = r
        if not (0 <= s < len(mentions)) or not (0 <= o < len(mentions)):
            problems.append(f"{where}: relation {k} references a missing mention ({s}, {o})")
        if s == o:
            problems.append(f"{where}: relation {k} relates mention {s} to itself")
        if (s, o) in seen:
            problems.append(
                f"{where}: relation {k} duplicates the (subject, object) pair ({s}, {o})"
            )
        seen.add((s, o))
        if pred == NULL:
            problems.append(f"{where}: relation {k} uses the reserved {NULL} predicate")
        elif schema is not None and not schema.has_predicate(pred):
            problems.append(f"{where}: relation {k} has unknown predicate {pred!r}")
        gold.append((s, o, pred))
    if problems:
        return None, problems
    return REInstance(iid, tuple(tokens), tuple(ms), tuple(gold)), []


def read_dataset(path, schema=None):
    """Parse a JSONL file, returning (instances, violations). Never raises on content."""
    instances, problems = [], []
    seen_ids = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                problems.append(f"{where}: malformed JSON ({exc.msg})")
                continue
            inst, errs = instance_from_obj(obj, schema, where)
            problems.extend(errs)
            if inst is None:
                continue
            if inst.id in seen_ids:
                problems.append(f"{where}: duplicate id {inst.id!r} (first on line {seen_ids[inst.id]})")
                continue
            seen_ids[inst.id] = lineno
            instances.append(inst)
    return instances, problems


def parse_dataset(path, schema=None):
    instances, problems = read_dataset(path, schema)
    if problems:
        raise DatasetError(problems)
    return instances


def write_dataset(instances, path):
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_json(), ensure_ascii=False) + "\n")


def type_pairs(instances):
    """All ordered (subject type, object type) pairs that candidate generation can produce."""
    out = set()
    for inst in instances:
        types = [m.type for m in inst.mentions]
        for i, ti in enumerate(types):
            for j, tj in enumerate(types):
                if i != j:
                    out.add((ti, tj))
    return out


def gold_type_pairs(instances):
    out = set()
    for inst in instances:
        for s, o, _ in inst.gold:
            out.add((inst.mentions[s].type, inst.mentions[o].type))
    return out


def generate_pairs(instance, schema=None, null_cap=None, rng_seed=0, allowed_type_pairs=None):
    """Ordered pairs of distinct mentions; pairs without gold get NULL.

    ``null_cap`` (training only) keeps at most ``null_cap`` NULL pairs per
    labelled pair, sampled uniformly with ``rng_seed``. ``allowed_type_pairs``
    is the opt-in type filter.
    """
    gold = {(s, o): p for s, o, p in instance.gold}
    pairs = []
    for i, mi in enumerate(instance.mentions):
        for j, mj in enumerate(instance.mentions):
            if i == j:
                continue
            label = gold.get((i, j), NULL)
            if schema is not None and not schema.has_predicate(label):
                raise SchemaError(f"instance {instance.id}: unknown predicate {label!r}")
            if allowed_type_pairs is not None and (mi.type, mj.type) not in allowed_type_pairs:
                continue
            pairs.append(CandidatePair(instance.id, i, j, label))
    if null_cap is None:
        return pairs
    null_idx = [k for k, p in enumerate(pairs) if p.label == NULL]
    keep_n = null_cap * (len(pairs) - len(null_idx))
    if len(null_idx) <= keep_n:
        return pairs
    rng = np.random.default_rng(rng_seed)
    chosen = set(np.asarray(null_idx)[rng.choice(len(null_idx), keep_n, replace=False)].tolist())
    return [p for k, p in enumerate(pairs) if p.label != NULL or k in chosen]


# ---------------------------------------------------------------------------
# batches


@dataclass
class Batch:
    pairs: list
    labels: np.ndarray  # [B] predicate indices
    input_ids: np.ndarray  # [B, Lt]
    input_mask: np.ndarray  # [B, Lt] bool
    input_sub: np.ndarray  # [B]
    input_obj: np.ndarray  # [B]
    desc_ids: np.ndarray  # [B*R, Ld], pair-major
    desc_mask: np.ndarray
    desc_sub: np.ndarray
    desc_obj: np.ndarray
    n_predicates: int

    def __len__(self):
        return len(self.pairs)


def mark_pair(pair, instance, schema, vocab, max_len, desc_max_len=DESCRIPTION_MAX_LEN):
    """Marked input sequence and one marked description per predicate for a pair."""
    subj = instance.mentions[pair.subject]
    obj = instance.mentions[pair.object]
    try:
        seq = mark_input(instance.tokens, subj, obj, vocab, max_len)
        s_text = instance.span_text(pair.subject)
        o_text = instance.span_text(pair.object)
        descs = []
        for pred in schema.predicates:
            filled = fill_template(schema, pred, s_text, o_text, subj.type, obj.type)
            descs.append(mark_description(filled, subj.type, obj.type, vocab, desc_max_len))
    except (InputError, SchemaError) as exc:
        raise type(exc)(
            f"pair {pair.instance_id}({pair.subject}->{pair.object}): {exc}"
        ) from None
    return seq, descs


def _pad(seqs):
    width = max(len(s.ids) for s in seqs)
    ids = np.zeros((len(seqs), width), dtype=np.int64)
    mask = np.zeros((len(seqs), width), dtype=bool)
    for k, s in enumerate(seqs):
        ids[k, : len(s.ids)] = s.ids
        mask[k, : len(s.ids)] = True
    sub = np.array([s.sub_start_pos for s in seqs], dtype=np.int64)
    obj = np.array([s.obj_start_pos for s in seqs], dtype=np.int64)
    return ids, mask, sub, obj


def collate(pairs, marked, schema):
    """Pad already-marked (input, descriptions) tuples into a Batch."""
    inputs = [m[0] for m in marked]
    descs = [d for m in marked for d in m[1]]
    ii, im, isub, iobj = _pad(inputs)
    di, dm, dsub, dobj = _pad(descs)
    labels = np.array([schema.index(p.label) for p in pairs], dtype=np.int64)
    return Batch(list(pairs), labels, ii, im, isub, iobj, di, dm, dsub, dobj, schema.n_predicates)


def make_batch(pairs, instances, schema, vocab, max_len, desc_max_len=DESCRIPTION_MAX_LEN):
    if not pairs:
        raise InputError("make_batch needs at least one pair")
    by_id = instances if isinstance(instances, dict) else {i.id: i for i in instances}
    marked = []
    for p in pairs:
        if p.instance_id not in by_id:
            raise InputError(f"pair references unknown instance {p.instance_id!r}")
        marked.append(mark_pair(p, by_id[p.instance_id], schema, vocab, max_len, desc_max_len))
    return collate(pairs, marked, schema)
