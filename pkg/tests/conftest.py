import numpy as np
import pytest

from reldesc.data import REInstance
from reldesc.encoder import EncoderConfig, build_vocab
from reldesc.model import ModelConfig, RelationModel
from reldesc.schema import Mention, PredicateSchema

TREATS_TEMPLATE = (
    "Applies a @subject@ remedy with the object of effecting a cure or managing a "
    "@object@ condition."
)

SCHEMA_DICT = {
    "predicates": ["NULL", "TREATS", "CAUSES"],
    "entity_types": ["Chemical", "Disease"],
    "templates": {
        "NULL": "There are no relations between the @subject@ and @object@.",
        "NULL|Chemical|Disease": "There are no relations between the drug @subject@ and "
                                 "disease @object@.",
        "TREATS": TREATS_TEMPLATE,
        "CAUSES": "The @subject@ may induce the @object@ or increase its risk.",
    },
}


@pytest.fixture
def schema():
    return PredicateSchema.from_dict(SCHEMA_DICT)


@pytest.fixture
def tamoxifen():
    tokens = ("Tamoxifen is the most common endocrine therapy for women with metastatic "
              "breast cancer .").split()
    mentions = (Mention(0, 1, "Chemical"), Mention(11, 13, "Disease"))
    return REInstance("tam-0", tuple(tokens), mentions, ((0, 1, "TREATS"),))


@pytest.fixture
def corpus(tamoxifen):
    other = REInstance(
        "asp-0",
        tuple("Aspirin may induce asthma in some adult patients .".split()),
        (Mention(0, 1, "Chemical"), Mention(3, 4, "Disease"), Mention(6, 8, "Disease")),
        ((0, 1, "CAUSES"),),
    )
    return [tamoxifen, other]


@pytest.fixture
def vocab(corpus, schema):
    return build_vocab(corpus, schema)


@pytest.fixture
def small_encoder_config(vocab):
    return EncoderConfig(vocab_size=len(vocab), n_layers=1, n_heads=2, d_model=8, d_ff=16,
                         max_len=32)


@pytest.fixture
def small_model(vocab, schema, small_encoder_config):
    cfg = ModelConfig(d=4, desc_max_len=32, desc_init="independent")
    return RelationModel.initialize(vocab, schema, small_encoder_config, cfg, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria report one line each at the end of the run
ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    def record(number, ok, detail):
        line = f"[criterion {number}] {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
