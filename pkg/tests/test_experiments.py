import random

import pytest
from doubles import FnBackend
from oracles import candidate_law_violations

from clh.backend import OracleBackend, RecordingBackend, ScriptedBackend
from clh.errors import EmptyGold, UnknownCode
from clh.experiments import (
    AblationArm,
    CodeCorpus,
    build_candidate_set,
    candidate_scaling_run,
    context_ablation_run,
    decoding_mode_run,
    default_ablation_arms,
    with_decoding,
)
from clh.pipeline import ClinicalNote, Coder
from clh.retrieval import HashingEmbedder

SITES = ["lung", "liver", "kidney", "heart", "skin", "bone"]
KINDS = ["cyst", "abscess", "polyp", "tumor", "ulcer"]


@pytest.fixture(scope="module")
def small_corpus():
    codes, descs = [], []
    for i, site in enumerate(SITES):
        for j, kind in enumerate(KINDS):
            codes.append(f"K{i + 10}.{j}")
            descs.append(f"{kind} of the {site}")
    return CodeCorpus(codes, descs, HashingEmbedder())


@pytest.fixture(scope="module")
def synthetic_corpus(synthetic):
    return CodeCorpus.from_taxonomy(synthetic.taxonomy, HashingEmbedder())


def corpus_vectors(corpus):
    return corpus.embedder.embed_many(corpus.descriptions)


# candidate sets


def test_candidate_set_size_and_law(small_corpus):
    gold = ["K10.0", "K12.3", "K15.4"]
    cs = build_candidate_set(small_corpus, gold, 5)
    assert len(cs.combined) == 18
    assert set(gold) <= set(cs.combined)
    assert not cs.shortfall
    assert candidate_law_violations(small_corpus.codes, corpus_vectors(small_corpus), gold, 5, cs.negatives) == []


def test_k_zero_is_the_gold_set(small_corpus):
    cs = build_candidate_set(small_corpus, ["K11.2", "K10.0"], 0)
    assert cs.combined == ("K10.0", "K11.2")
    assert cs.negatives == ()
    assert cs.groups() == [["K10.0"], ["K11.2"]]


def test_candidate_law_on_random_gold_sets(small_corpus):
    rng = random.Random(5)
    vectors = corpus_vectors(small_corpus)
    for _ in range(30):
        gold = rng.sample(small_corpus.codes, rng.randint(1, 4))
        for k in (0, 1, 3, 5):
            cs = build_candidate_set(small_corpus, gold, k)
            assert candidate_law_violations(small_corpus.codes, vectors, gold, k, cs.negatives) == []
            assert set(cs.origin) == set(cs.negatives)
            assert all(cs.origin[n] in cs.positives for n in cs.negatives)


def test_shortfall_when_the_corpus_runs_out(small_corpus):
    cs = build_candidate_set(small_corpus, small_corpus.codes[:10], 5)
    assert cs.shortfall
    assert len(cs.combined) == 30


def test_candidate_set_is_deterministic(small_corpus):
    a = build_candidate_set(small_corpus, ["K13.1", "K14.0"], 3)
    b = build_candidate_set(small_corpus, ["K14.0", "K13.1"], 3)
    assert a == b and a.origin == b.origin


def test_candidate_set_errors(small_corpus):
    with pytest.raises(EmptyGold):
        build_candidate_set(small_corpus, [], 2)
    with pytest.raises(ValueError):
        build_candidate_set(small_corpus, ["K10.0"], -1)
    with pytest.raises(UnknownCode):
        build_candidate_set(small_corpus, ["Z99.9"], 1)


def test_groupings(small_corpus):
    cs = build_candidate_set(small_corpus, ["K10.0", "K15.4"], 2)
    groups = cs.groups("positive")
    assert len(groups) == 2 and all(len(g) == 3 for g in groups)
    assert sorted(c for g in groups for c in g) == list(cs.combined)
    assert cs.groups("chapter") == [list(cs.combined)]


# sweeps


def synthetic_coder(synthetic, synthetic_index, backend):
    return Coder(synthetic.taxonomy, synthetic_index, backend)


def test_k_zero_oracle_parity(synthetic, synthetic_index, synthetic_corpus):
    coder = synthetic_coder(synthetic, synthetic_index, OracleBackend())
    result = candidate_scaling_run(coder, synthetic_corpus, synthetic.notes, [0], workers=4)
    assert [(r.arm, r.k, r.micro_f1) for r in result.rows] == [
        ("validator/ids+descriptions/thinking", 0, 1.0),
        ("reconciler/ids+descriptions/thinking", 0, 1.0),
    ]


def test_oracle_stays_perfect_with_positive_grouping(synthetic, synthetic_index, synthetic_corpus):
    coder = synthetic_coder(synthetic, synthetic_index, OracleBackend())
    result = candidate_scaling_run(coder, synthetic_corpus, synthetic.notes[:20], [1, 5])
    assert all(r.micro_f1 == 1.0 for r in result.rows)


def test_chapter_grouping_runs(synthetic, synthetic_index, synthetic_corpus):
    coder = synthetic_coder(synthetic, synthetic_index, OracleBackend())
    result = candidate_scaling_run(coder, synthetic_corpus, synthetic.notes[:10], [0, 1], grouping="chapter")
    assert len(result.rows) == 4


def test_first_choice_script_degrades_with_k(synthetic, synthetic_index, synthetic_corpus):
    backend = ScriptedBackend({"validator:*": "<answer>1</answer>", "reconciler:*": "<answer>1</answer>"})
    coder = synthetic_coder(synthetic, synthetic_index, backend)
    result = candidate_scaling_run(coder, synthetic_corpus, synthetic.notes, [0, 1, 2])
    curve = dict(result.series()["validator/ids+descriptions/thinking"])
    assert curve[0] == 1.0
    assert curve[0] >= curve[1] >= curve[2]
    assert curve[2] < 1.0


def test_context_arms_change_prompts(synthetic, synthetic_index, synthetic_corpus):
    recorder = FnBackend(OracleBackend().complete)
    coder = synthetic_coder(synthetic, synthetic_index, recorder)
    arms = default_ablation_arms([1])
    notes = synthetic.notes[:4] + [n for n in synthetic.notes if any(c.startswith("Z") for c in n.gold)][:1]
    result = context_ablation_run(coder, synthetic_corpus, notes, arms, workers=1)
    assert [a["context"] for a in result.arms] == ["ids_only", "ids+descriptions", "ids+descriptions+guidelines"]
    assert {r.arm for r in result.rows} == {a.label for a in arms}
    prompts = [r.prompt for r in recorder.requests]
    per_arm = len(prompts) // 3
    code = sorted(synthetic.notes[0].gold)[0]
    description = synthetic.taxonomy.node(code).description
    assert not any(description in p for p in prompts[:per_arm])
    assert any(description in p for p in prompts[per_arm : 2 * per_arm])
    assert result.tallies["validator/ids+descriptions+guidelines/thinking"]["MissingGuideline"] > 0
    assert "MissingGuideline" not in result.tallies["validator/ids+descriptions/thinking"]


def test_decoding_modes_are_paired(synthetic, synthetic_index, synthetic_corpus):
    coder = synthetic_coder(synthetic, synthetic_index, OracleBackend())
    result = decoding_mode_run(coder, synthetic_corpus, synthetic.notes[:10], [0, 1])
    assert set(result.series()) == {"validator/ids+descriptions/thinking", "validator/ids+descriptions/constrained"}
    assert coder.backend.decoding == "thinking"


def test_with_decoding_reaches_wrapped_backends(synthetic, synthetic_index):
    recorder = RecordingBackend(OracleBackend())
    coder = synthetic_coder(synthetic, synthetic_index, recorder)
    switched = with_decoding(coder, "constrained")
    assert switched.backend.decoding == "constrained"
    assert coder.backend.decoding == "thinking"
    assert with_decoding(coder, "thinking") is coder


def test_failing_notes_are_tallied(synthetic, synthetic_index, synthetic_corpus):
    coder = synthetic_coder(synthetic, synthetic_index, ScriptedBackend({}))
    result = context_ablation_run(coder, synthetic_corpus, synthetic.notes[:3], [AblationArm(ks=(0,))])
    assert result.rows[0].micro_f1 == 0.0
    assert result.tallies["validator/ids+descriptions/thinking"]["ScriptedMiss"] > 0


def test_notes_without_gold_are_skipped(synthetic, synthetic_index, synthetic_corpus):
    coder = synthetic_coder(synthetic, synthetic_index, OracleBackend())
    notes = [ClinicalNote("empty", "no findings"), synthetic.notes[0]]
    result = candidate_scaling_run(coder, synthetic_corpus, notes, [0])
    assert all(r.n_notes == 1 for r in result.rows)
