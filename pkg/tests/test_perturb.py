import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aelif_lab.exceptions import ConfigError, InvalidEdit, PerturbationExhausted
from aelif_lab.perturb import (
    EditOp,
    PerturbConfig,
    TypoPerturber,
    apply_edit,
    gen_adversarial_set,
    load_published_prompts,
    load_published_table,
    random_edit,
)
from aelif_lab.pipeline import CATEGORIES


def levenshtein(a, b):
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def test_levenshtein_oracle_sanity():
    assert levenshtein("kitten", "sitting") == 3
    assert levenshtein("cat", "cta") == 2
    assert levenshtein("", "abc") == 3


@pytest.mark.parametrize("prompt, op, expected", [
    ("a photo of sks backpack", EditOp("char_delete", 1, 1), "a poto of sks backpack"),
    ("a photo of sks dog", EditOp("word_drop", 0), "photo of sks dog"),
    ("a photo of sks cat", EditOp("char_transpose", 4, 1), "a photo of sks cta"),
    ("a photo of sks dog", EditOp("char_duplicate", 3, 0), "a photo of ssks dog"),
    ("a photo of sks dog", EditOp("char_substitute", 4, 2, "h"), "a photo of sks doh"),
    ("a photo of sks cat", EditOp("word_drop", 2), "a photo  sks cat"),
])
def test_apply_edit_examples(prompt, op, expected):
    assert apply_edit(prompt, op) == expected


@pytest.mark.parametrize("op", [
    EditOp("word_drop", 4),
    EditOp("word_drop", 1),
    EditOp("char_delete", 9, 0),
    EditOp("char_delete", 1, 10),
    EditOp("char_transpose", 1, 4),
    EditOp("char_substitute", 1, 0, "p"),
    EditOp("teleport", 1, 0),
])
def test_apply_edit_rejects_invalid(op):
    with pytest.raises(InvalidEdit):
        apply_edit("a photo of sks dog", op)


def test_sks_degrades_only_through_char_edits():
    p = "a photo of sks dog"
    assert apply_edit(p, EditOp("char_delete", 3, 0)) == "a photo of ks dog"
    assert apply_edit(p, EditOp("char_transpose", 3, 1)) == "a photo of ssk dog"
    assert apply_edit(p, EditOp("char_delete", 3, 2)) == "a photo of sk dog"


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["a photo of sks dog", "a photo of sks teapot"]))
def test_random_edit_costs_one_or_two(seed, prompt):
    rng = np.random.default_rng(seed)
    out = apply_edit(prompt, random_edit(prompt, rng))
    assert 1 <= levenshtein(prompt, out) <= 2
    assert out.split()[-1] != ""


def test_single_minimal_typo():
    out = gen_adversarial_set("a photo of sks dog", PerturbConfig(min_edits=1, max_edits=1, count=1, seed=5))
    assert len(out) == 1
    assert 1 <= levenshtein(out[0], "a photo of sks dog") <= 2


def test_count_forty_within_distance_four():
    template = "a photo of sks backpack"
    out = gen_adversarial_set(template, PerturbConfig(max_edits=2, count=40, seed=0))
    assert len(set(out)) == 40
    assert all(1 <= levenshtein(template, p) <= 4 for p in out)


@pytest.mark.parametrize("category", CATEGORIES)
@pytest.mark.parametrize("max_edits", [1, 2, 3])
def test_distance_bounded_by_twice_max_edits(category, max_edits):
    from aelif_lab.pipeline import instance_prompt
    template = instance_prompt(category)
    out = gen_adversarial_set(template, PerturbConfig(max_edits=max_edits, count=40, seed=7))
    assert len(set(out)) == 40 and template not in out
    assert all(1 <= levenshtein(template, p) <= 2 * max_edits for p in out)


def test_generation_is_reproducible():
    cfg = PerturbConfig(seed=11)
    assert gen_adversarial_set("a photo of sks cat", cfg) == gen_adversarial_set("a photo of sks cat", cfg)
    assert gen_adversarial_set("a photo of sks cat", cfg) != gen_adversarial_set(
        "a photo of sks cat", PerturbConfig(seed=12))


def test_generation_exhausts():
    # only a handful of single-edit variants exist for a one-edit, kind-restricted engine
    with pytest.raises(PerturbationExhausted):
        gen_adversarial_set("a photo of sks dog", PerturbConfig(max_edits=1, count=10, seed=0),
                            kind_weights={"char_transpose": 1.0})


def test_config_validation():
    with pytest.raises(ConfigError):
        PerturbConfig(min_edits=3, max_edits=2)
    with pytest.raises(ConfigError):
        PerturbConfig(count=0)
    with pytest.raises(ConfigError):
        gen_adversarial_set("photo of dog", PerturbConfig())


def test_perturber_estimator():
    pert = TypoPerturber(count=5, random_state=3)
    assert pert.get_params()["count"] == 5
    sets = pert.fit_transform(["a photo of sks dog", "a photo of sks cat"])
    assert [len(s) for s in sets] == [5, 5]
    assert sets[0] == gen_adversarial_set("a photo of sks dog", PerturbConfig(count=5, seed=3))


@pytest.mark.parametrize("model", ["sd3", "sdxl"])
@pytest.mark.parametrize("category", CATEGORIES)
def test_published_fixture_corpus(model, category):
    prompts = load_published_prompts(category, model)
    table = load_published_table(category, model)
    assert prompts == [row[0] for row in table]
    assert 14 <= len(prompts) <= 50
    assert all(p.strip() for p in prompts)


def test_published_fixture_known_rows():
    table = {r[0]: r[1:] for r in load_published_table("backpack", "sd3")}
    mask, noise = table["a poto of sks backpack"][1:]
    assert (mask, noise) == (0.0201, 0.0318)
    assert "a photo of sks cta" in load_published_prompts("cat", "sdxl")
