"""Prompt tokenization and the per-token text encoder.

Out-of-vocabulary words fall back to character tokens, so a single typo
("photo" -> "poto") changes both the token ids and the sequence length.
"""

import json
import string
from dataclasses import dataclass, field

import numpy as np

from .exceptions import EmptyCorpus, EmptyPrompt, InvalidToken, ShapeMismatch

EMBED_DIM = 16
MAX_LEN = 32
FALLBACK_CHAR = "<unk>"
CHAR_ALPHABET = tuple(string.ascii_lowercase) + tuple(string.digits) + (FALLBACK_CHAR,)


@dataclass(frozen=True)
class Vocabulary:
    word_ids: dict
    char_ids: dict

    @property
    def size(self):
        return len(self.word_ids) + len(self.char_ids)

    def char_id(self, ch):
        return self.char_ids.get(ch, self.char_ids[FALLBACK_CHAR])

    def to_json(self):
        return json.dumps({"word_ids": self.word_ids, "char_ids": self.char_ids}, sort_keys=True)

    @classmethod
    def from_dict(cls, data):
        return cls(word_ids=dict(data["word_ids"]), char_ids=dict(data["char_ids"]))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple

    @property
    def length(self):
        return len(self.tokens)

    def __len__(self):
        return len(self.tokens)


@dataclass
class TextEncoderParams:
    embedding_table: np.ndarray
    positional_table: np.ndarray = field(repr=False)

    @property
    def dim(self):
        return self.embedding_table.shape[1]

    @property
    def max_len(self):
        return self.positional_table.shape[0]

    def copy(self):
        return TextEncoderParams(self.embedding_table.copy(), self.positional_table.copy())


def build_vocab(corpus):
    """Collect every whitespace-delimited word in ``corpus`` plus a char alphabet.

    Words come first (sorted), then characters (sorted), so ids are dense and
    the two id spaces never overlap.
    """
    corpus = list(corpus)
    if not corpus:
        raise EmptyCorpus("cannot build a vocabulary from an empty corpus")
    words = sorted({w for prompt in corpus for w in prompt.lower().split()})
    word_ids = {w: i for i, w in enumerate(words)}
    char_ids = {c: len(words) + i for i, c in enumerate(sorted(CHAR_ALPHABET))}
    return Vocabulary(word_ids=word_ids, char_ids=char_ids)


def tokenize(prompt, vocab, max_len=MAX_LEN):
    words = prompt.lower().split()
    if not words:
        raise EmptyPrompt("prompt is empty after trimming")
    tokens = []
    for word in words:
        if word in vocab.word_ids:
            tokens.append(vocab.word_ids[word])
        else:
            tokens.extend(vocab.char_id(ch) for ch in word)
    return TokenSequence(tuple(tokens[:max_len]))


def init_encoder_params(vocab, rng, dim=EMBED_DIM, max_len=MAX_LEN,
                        token_scale=1.0, position_scale=0.1):
    return TextEncoderParams(
        embedding_table=token_scale * rng.standard_normal((vocab.size, dim)),
        positional_table=position_scale * rng.standard_normal((max_len, dim)),
    )


def encode(tokens, params):
    """Look up token + positional embeddings. Returns an (L, d) array."""
    ids = np.asarray(tokens.tokens if isinstance(tokens, TokenSequence) else tokens, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ShapeMismatch("token sequence must be a non-empty 1-D sequence")
    if ids.size > params.max_len:
        raise ShapeMismatch(f"sequence length {ids.size} exceeds positional table {params.max_len}")
    if ids.min() < 0 or ids.max() >= params.embedding_table.shape[0]:
        raise InvalidToken(f"token id out of range [0, {params.embedding_table.shape[0]})")
    return params.embedding_table[ids] + params.positional_table[: ids.size]
