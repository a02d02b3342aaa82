"""Data model and preprocessing for multi-domain goal-oriented dialogues."""

from mtss.corpus.types import (
    GENERAL_DOMAIN,
    Corpus,
    CorpusError,
    Database,
    DomainGoal,
    DomainSchema,
    EntityRecord,
    Episode,
    Turn,
    TurnRef,
    query_db,
    split_by_domain,
)
from mtss.corpus.state import (
    BeliefError,
    BeliefLayout,
    db_pointer,
    kb_pointer_vector,
    state_size,
    turn_state,
)
from mtss.corpus.delex import Delexicalizer, delexicalize
from mtss.corpus.vocab import (
    BOS_ID,
    BOS_TOKEN,
    EOS_ID,
    EOS_TOKEN,
    PAD_ID,
    PAD_TOKEN,
    UNK_ID,
    UNK_TOKEN,
    Vocabulary,
    build_vocab,
)
from mtss.corpus.io import (
    load_corpus,
    load_vocab,
    read_multiwoz,
    save_corpus,
    save_vocab,
    schema_hash,
)

__all__ = [
    "GENERAL_DOMAIN",
    "Corpus",
    "CorpusError",
    "Database",
    "DomainGoal",
    "DomainSchema",
    "EntityRecord",
    "Episode",
    "Turn",
    "TurnRef",
    "query_db",
    "split_by_domain",
    "BeliefError",
    "BeliefLayout",
    "db_pointer",
    "kb_pointer_vector",
    "state_size",
    "turn_state",
    "Delexicalizer",
    "delexicalize",
    "Vocabulary",
    "build_vocab",
    "PAD_TOKEN",
    "BOS_TOKEN",
    "EOS_TOKEN",
    "UNK_TOKEN",
    "PAD_ID",
    "BOS_ID",
    "EOS_ID",
    "UNK_ID",
    "save_corpus",
    "load_corpus",
    "save_vocab",
    "load_vocab",
    "schema_hash",
    "read_multiwoz",
]
