"""Rule-based typo generator for DreamBooth-style prompts.

Edits operate on whitespace-delimited words located by character span, so
spacing produced by earlier edits (e.g. the double space left behind when a
middle word is dropped) is preserved exactly.
"""

import csv
import re
from dataclasses import dataclass
from importlib import resources

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_random_state
from .exceptions import ConfigError, InvalidEdit, PerturbationExhausted

EDIT_KINDS = ("char_delete", "char_transpose", "char_duplicate", "char_substitute", "word_drop")
DEFAULT_KIND_WEIGHTS = {
    "char_delete": 0.35,
    "char_transpose": 0.25,
    "char_duplicate": 0.15,
    "char_substitute": 0.15,
    "word_drop": 0.10,
}
# a dropped word may cost at most two character edits
MAX_DROP_COST = 2
TEMPLATE_RE = re.compile(r"^a photo of sks \S+( \S+)*$")

_KEYBOARD_ROWS = ("qwertyuiop", "asdfghjkl", "zxcvbnm")


def _keyboard_neighbours():
    pos = {c: (r, i) for r, row in enumerate(_KEYBOARD_ROWS) for i, c in enumerate(row)}
    out = {}
    for c, (r, i) in pos.items():
        out[c] = "".join(
            o for o, (r2, i2) in pos.items() if o != c and abs(r - r2) <= 1 and abs(i - i2) <= 1
        )
    return out


KEYBOARD_NEIGHBOURS = _keyboard_neighbours()


@dataclass(frozen=True)
class EditOp:
    kind: str
    word_index: int
    char_index: int = 0
    replacement: str = None


@dataclass(frozen=True)
class PerturbConfig:
    min_edits: int = 1
    max_edits: int = 3
    count: int = 40
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.min_edits <= self.max_edits <= 4:
            raise ConfigError("need 1 <= min_edits <= max_edits <= 4")
        if self.count < 1:
            raise ConfigError("count must be >= 1")

    def to_dict(self):
        return {"min_edits": self.min_edits, "max_edits": self.max_edits,
                "count": self.count, "seed": self.seed}


def word_spans(prompt):
    return [m.span() for m in re.finditer(r"\S+", prompt)]


def _drop_cost(spans, i):
    start, end = spans[i]
    return (end - start) + (1 if i == 0 else 0)


def apply_edit(prompt, op):
    """Apply a single edit and return the new prompt.

    Raises ``InvalidEdit`` when the indices do not fit the prompt, when the
    edit would delete the final (item) word, or when it would be a no-op.
    """
    spans = word_spans(prompt)
    if op.kind not in EDIT_KINDS:
        raise InvalidEdit(f"unknown edit kind {op.kind!r}")
    if not 0 <= op.word_index < len(spans):
        raise InvalidEdit(f"word index {op.word_index} out of range for {prompt!r}")
    start, end = spans[op.word_index]
    word = prompt[start:end]
    last = op.word_index == len(spans) - 1

    if op.kind == "word_drop":
        if last:
            raise InvalidEdit("the item word cannot be dropped")
        if _drop_cost(spans, op.word_index) > MAX_DROP_COST:
            raise InvalidEdit(f"word {word!r} is too long to drop")
        if op.word_index == 0:
            out = prompt[:start] + prompt[spans[1][0]:]
        else:
            out = prompt[:start] + prompt[end:]
        return out

    c = op.char_index
    if not 0 <= c < len(word):
        raise InvalidEdit(f"char index {c} out of range for word {word!r}")
    if op.kind == "char_delete":
        if len(word) == 1 and (last or len(spans) == 1):
            raise InvalidEdit("the item word cannot be deleted entirely")
        if len(word) == 1:
            # removing a one-letter word is a word drop
            return apply_edit(prompt, EditOp("word_drop", op.word_index))
        new = word[:c] + word[c + 1:]
    elif op.kind == "char_transpose":
        if c + 1 >= len(word):
            raise InvalidEdit("transpose needs a following character")
        if word[c] == word[c + 1]:
            raise InvalidEdit("transposing equal characters is a no-op")
        new = word[:c] + word[c + 1] + word[c] + word[c + 2:]
    elif op.kind == "char_duplicate":
        new = word[:c + 1] + word[c] + word[c + 1:]
    else:
        rep = op.replacement
        if rep is None or len(rep) != 1 or rep.isspace() or rep == word[c]:
            raise InvalidEdit("substitution needs a different single non-space character")
        new = word[:c] + rep + word[c + 1:]
    return prompt[:start] + new + prompt[end:]


def _candidate_edits(prompt, kind):
    spans = word_spans(prompt)
    last = len(spans) - 1
    out = []
    for w, (s, e) in enumerate(spans):
        word = prompt[s:e]
        if kind == "word_drop":
            if w != last and _drop_cost(spans, w) <= MAX_DROP_COST:
                out.append(EditOp(kind, w))
            continue
        for c in range(len(word)):
            if kind == "char_delete":
                if len(word) == 1 and (w != last or len(spans) == 1):
                    # single-letter words go through word_drop
                    continue
                out.append(EditOp(kind, w, c))
            elif kind == "char_transpose":
                if c + 1 < len(word) and word[c] != word[c + 1]:
                    out.append(EditOp(kind, w, c))
            elif kind == "char_duplicate":
                out.append(EditOp(kind, w, c))
            elif kind == "char_substitute":
                if KEYBOARD_NEIGHBOURS.get(word[c]):
                    out.append(EditOp(kind, w, c))
    return out


def random_edit(prompt, rng, kind_weights=None):
    """Draw one valid edit: kind by weight, then a uniform location."""
    weights = dict(kind_weights or DEFAULT_KIND_WEIGHTS)
    while weights:
        kinds = list(weights)
        probs = np.array([weights[k] for k in kinds], dtype=np.float64)
        kind = kinds[rng.choice(len(kinds), p=probs / probs.sum())]
        cands = _candidate_edits(prompt, kind)
        if not cands:
            del weights[kind]
            continue
        op = cands[rng.integers(len(cands))]
        if kind == "char_substitute":
            word = prompt[slice(*word_spans(prompt)[op.word_index])]
            neigh = KEYBOARD_NEIGHBOURS[word[op.char_index]]
            op = EditOp(kind, op.word_index, op.char_index, neigh[rng.integers(len(neigh))])
        return op
    raise InvalidEdit(f"no valid edit exists for {prompt!r}")


def gen_adversarial_set(template_prompt, config, rng=None, kind_weights=None):
    """Generate ``config.count`` distinct typo variants of ``template_prompt``.

    Each variant receives between ``min_edits`` and ``max_edits`` edits
    applied in sequence. ``rng`` defaults to a generator seeded with
    ``config.seed``.
    """
    if not TEMPLATE_RE.match(template_prompt):
        raise ConfigError(f"template must look like 'a photo of sks <item>', got {template_prompt!r}")
    rng = np.random.default_rng(config.seed) if rng is None else check_random_state(rng)
    seen, out = {template_prompt}, []
    for _ in range(100 * config.count):
        k = int(rng.integers(config.min_edits, config.max_edits + 1))
        prompt = template_prompt
        for _ in range(k):
            prompt = apply_edit(prompt, random_edit(prompt, rng, kind_weights))
        if prompt not in seen:
            seen.add(prompt)
            out.append(prompt)
            if len(out) == config.count:
                return out
    raise PerturbationExhausted(
        f"only {len(out)} distinct prompts after {100 * config.count} attempts")


class TypoPerturber(BaseEstimator):
    """Estimator-style wrapper: ``transform`` maps templates to typo sets."""

    def __init__(self, min_edits=1, max_edits=3, count=40, random_state=0):
        self.min_edits = min_edits
        self.max_edits = max_edits
        self.count = count
        self.random_state = random_state

    def fit(self, X=None, y=None):
        self.config_ = PerturbConfig(self.min_edits, self.max_edits, self.count, self.random_state)
        return self

    def transform(self, templates):
        if not hasattr(self, "config_"):
            self.fit()
        if isinstance(templates, str):
            return gen_adversarial_set(templates, self.config_)
        return [gen_adversarial_set(t, self.config_) for t in templates]

    def fit_transform(self, X, y=None):
        return self.fit().transform(X)


def load_published_prompts(category, model="sd3"):
    """Perturbed prompts for ``category`` exactly as listed in the published tables."""
    path = resources.files("aelif_lab") / "fixtures" / "published" / model / f"{category}.txt"
    return path.read_text().splitlines()


def load_published_table(category, model="sd3"):
    """Rows of (prompt, orig, mask, noise) from the published detail tables."""
    path = resources.files("aelif_lab") / "fixtures" / "published" / model / f"{category}.csv"
    with path.open() as fh:
        return [(r["prompt"], float(r["orig"]), float(r["mask"]), float(r["noise"]))
                for r in csv.DictReader(fh)]
