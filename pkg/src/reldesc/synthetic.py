"""Constructed corpora where the predicate is a deterministic function of a cue word.

Every instance holds one Chemical and one Disease mention linked by a cue
word (``treats`` -> TREATS, ...), optionally plus a Gene mention that
relates to nothing. The bag-of-cue-words oracle below scores F1 = 1.0.
"""

import numpy as np

from .data import REInstance
from .schema import NULL, Mention, PredicateSchema

CUES = {
    "TREATS": ("treats", "cures"),
    "CAUSES": ("causes", "induces"),
    "INHIBITS": ("inhibits", "blocks"),
}
CUE_TO_PREDICATE = {w: p for p, words in CUES.items() for w in words}

CHEMICALS = ("tamoxifen", "aspirin", "cisplatin", "metformin", "ibuprofen", "imatinib",
             "lithium", "warfarin")
DISEASES = (("breast", "cancer"), ("diabetes",), ("asthma",), ("migraine",),
            ("lung", "cancer"), ("hepatitis",), ("anemia",), ("psoriasis",))
GENES = ("brca1", "tp53", "egfr", "kras", "myc")
FILLER = ("the", "in", "patients", "often", "study", "results", "clinical", "we", "observed",
          "that", "reported", "recent", "data", "trial", "cohort", "significantly", "also",
          "adult", "cases", "some")

SCHEMA = {
    "predicates": [NULL, "TREATS", "CAUSES", "INHIBITS"],
    "entity_types": ["Chemical", "Disease", "Gene"],
    "templates": {
        "NULL|Chemical|Disease": "There are no relations between the drug @subject@ and "
                                 "disease @object@.",
        "NULL": "There are no relations between @subject@ and @object@.",
        "TREATS": "Applies a @subject@ remedy with the object of effecting a cure or "
                  "managing a @object@ condition.",
        "CAUSES": "The drug @subject@ may induce the disease @object@ or increase its risk.",
        "INHIBITS": "The @subject@ decreases or blocks the activity of @object@.",
    },
}


def synthetic_schema():
    return PredicateSchema.from_dict(SCHEMA)


def _filler(rng, lo, hi):
    return [FILLER[i] for i in rng.integers(0, len(FILLER), size=rng.integers(lo, hi + 1))]


def make_instance(rng, iid, p_gene=0.5):
    predicate = list(CUES)[rng.integers(len(CUES))]
    cue = CUES[predicate][rng.integers(2)]
    chem = [CHEMICALS[rng.integers(len(CHEMICALS))]]
    dis = list(DISEASES[rng.integers(len(DISEASES))])
    tokens, mentions = _filler(rng, 0, 3), []
    mentions.append(Mention(len(tokens), len(tokens) + 1, "Chemical"))
    tokens += chem + _filler(rng, 0, 2) + [cue] + _filler(rng, 0, 2)
    mentions.append(Mention(len(tokens), len(tokens) + len(dis), "Disease"))
    tokens += dis
    if rng.random() < p_gene:
        tokens += _filler(rng, 1, 3)
        mentions.append(Mention(len(tokens), len(tokens) + 1, "Gene"))
        tokens.append(GENES[rng.integers(len(GENES))])
    tokens += _filler(rng, 0, 2) + ["."]
    return REInstance(iid, tuple(tokens), tuple(mentions), ((0, 1, predicate),))


def make_corpus(n, seed=0, prefix="syn"):
    rng = np.random.default_rng(seed)
    return [make_instance(rng, f"{prefix}-{k}") for k in range(n)]


def make_splits(n_train=200, n_dev=50, n_test=50, seed=0):
    return (
        make_corpus(n_train, seed=[seed, 0], prefix="train"),
        make_corpus(n_dev, seed=[seed, 1], prefix="dev"),
        make_corpus(n_test, seed=[seed, 2], prefix="test"),
    )


def cue_oracle(instance, subject, object_):
    """Predicate implied by the cue word, for Chemical -> Disease pairs only."""
    s, o = instance.mentions[subject], instance.mentions[object_]
    if (s.type, o.type) != ("Chemical", "Disease"):
        return NULL
    for tok in instance.tokens:
        if tok in CUE_TO_PREDICATE:
            return CUE_TO_PREDICATE[tok]
    return NULL
