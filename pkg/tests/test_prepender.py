"""Example selection and target concatenation tests."""

import random

import pytest

from rarekit.corpus import Corpus, Utterance
from rarekit.errors import ValidationError
from rarekit.prepender import (
    SEP_TOKEN,
    PrependedPair,
    build_gold_test_set,
    build_prepended_train_set,
    concat_target,
    read_pairs,
    sentence_rare_word,
    write_pairs,
)
from rarekit.splitter import count_frequencies, partition
from rarekit.synth import SynthConfig, gen_corpus


def _utt(i, transcript):
    return Utterance(id=f"u{i:03d}", speaker_id=f"s{i % 3}", duration_s=1.0,
                     transcript_raw=transcript, translation_raw=transcript.upper())


def _corpus(texts):
    return Corpus(tuple(_utt(i, t) for i, t in enumerate(texts)))


class TestSentenceRareWord:
    def test_orders_by_frequency(self):
        utt = _utt(0, "a b c")
        freqs = {"a": 5, "b": 2, "c": 9}
        assert sentence_rare_word(utt, freqs) == ["b", "a", "c"]

    def test_lexicographic_tie_break(self):
        utt = _utt(0, "y x")
        assert sentence_rare_word(utt, {"x": 3, "y": 3}) == ["x", "y"]

    def test_duplicates_removed(self):
        utt = _utt(0, "a a b")
        assert sentence_rare_word(utt, {"a": 1, "b": 2}) == ["a", "b"]

    def test_no_known_token_rejected(self):
        with pytest.raises(ValidationError):
            sentence_rare_word(_utt(0, "zzz"), {"a": 1})

    def test_heads_match_bruteforce_min_scan(self):
        rng = random.Random(5)
        vocab = [f"w{i}" for i in range(60)]
        corpus = _corpus(
            [" ".join(rng.choice(vocab) for _ in range(rng.randint(2, 9)))
             for _ in range(200)]
        )
        freqs = count_frequencies(corpus)
        for utt in corpus:
            head = sentence_rare_word(utt, freqs)[0]
            # Exhaustive oracle: min over (count, token) pairs.
            best = min((freqs[t], t) for t in set(utt.transcript_tokens))
            assert (freqs[head], head) == best


class TestBuildPrependedTrainSet:
    def test_two_utterances_sharing_rarest(self):
        corpus = _corpus(["w common common", "w common other common"])
        freqs = count_frequencies(corpus)
        pairs = build_prepended_train_set(corpus, freqs, seed=1)
        assert len(pairs) == 2
        assert {p.link_word for p in pairs} == {"w"}
        assert pairs[0].example.id == "u001" and pairs[1].example.id == "u000"

    def test_unique_vocabulary_falls_back_to_random(self):
        corpus = _corpus(["aaa bbb", "ccc ddd", "eee fff"])
        freqs = count_frequencies(corpus)
        pairs = build_prepended_train_set(corpus, freqs, seed=1)
        for p in pairs:
            assert p.link_word == ""
            assert p.example.id != p.main.id

    def test_too_small_rejected(self):
        corpus = _corpus(["a"])
        with pytest.raises(ValidationError):
            build_prepended_train_set(corpus, count_frequencies(corpus), seed=0)

    def test_deterministic_and_predicate_rechecked(self):
        rng = random.Random(17)
        vocab = [f"w{i}" for i in range(300)]
        corpus = _corpus(
            [" ".join(rng.choice(vocab) for _ in range(rng.randint(3, 8)))
             for _ in range(1000)]
        )
        freqs = count_frequencies(corpus)
        pairs_a = build_prepended_train_set(corpus, freqs, seed=42)
        pairs_b = build_prepended_train_set(corpus, freqs, seed=42)
        assert [(p.main.id, p.example.id, p.link_word) for p in pairs_a] == [
            (p.main.id, p.example.id, p.link_word) for p in pairs_b
        ]
        shared_count = 0
        for p in pairs_a:
            assert p.example.id != p.main.id
            if p.link_word:
                shared_count += 1
                # Re-check the shared-word predicate independently.
                assert p.link_word in p.main.transcript_tokens
                assert p.link_word in p.example.transcript_tokens
                # And that it is the rarest *shared* word of the main utterance.
                for candidate in sentence_rare_word(p.main, freqs):
                    others = any(
                        candidate in u.transcript_tokens
                        for u in corpus if u.id != p.main.id
                    )
                    if others:
                        assert candidate == p.link_word
                        break
        assert shared_count > 900  # dense vocabulary: almost everything pairs

    def test_pairing_stable_under_reordering(self):
        corpus = _corpus(["w a b", "w c d", "q e f", "q g h"])
        freqs = count_frequencies(corpus)
        reordered = Corpus(tuple(reversed(corpus.utterances)))
        by_main_a = {
            p.main.id: p.example.id
            for p in build_prepended_train_set(corpus, freqs, seed=3)
        }
        by_main_b = {
            p.main.id: p.example.id
            for p in build_prepended_train_set(reordered, freqs, seed=3)
        }
        assert by_main_a == by_main_b


class TestBuildGoldTestSet:
    def _bundle(self):
        cfg = SynthConfig(n_utterances=400, vocab_size=250, n_rare_words=40,
                          n_speakers=5, dim=8, seed=33)
        corpus = gen_corpus(cfg)
        return partition(corpus, seed=2)

    def test_full_bundle_has_no_violations(self):
        bundle = self._bundle()
        pairs, violations = build_gold_test_set(bundle.tst, bundle.pool, bundle.catalog)
        assert violations == []
        assert len(pairs) == len(bundle.tst)
        for p in pairs:
            assert p.gold
            assert p.link_word in p.example.transcript_tokens
            assert p.link_word in p.main.transcript_tokens

    def test_smallest_id_tie_break(self):
        tst = Corpus((_utt(9, "q test common"),))
        pool = Corpus((_utt(3, "q pool one"), _utt(1, "q pool two")))
        from rarekit.splitter import CatalogEntry, RareWordCatalog

        catalog = RareWordCatalog(
            {"q": CatalogEntry(word="q", shot_class="zero", pool_utt="u001",
                               devtst_utt="u009")}
        )
        pairs, violations = build_gold_test_set(tst, pool, catalog)
        assert violations == []
        assert pairs[0].example.id == "u001"

    def test_missing_pool_candidate_reported_not_fatal(self):
        tst = Corpus((_utt(9, "q test"),))
        pool = Corpus((_utt(1, "other words"),))
        from rarekit.splitter import CatalogEntry, RareWordCatalog

        catalog = RareWordCatalog(
            {"q": CatalogEntry(word="q", shot_class="zero", pool_utt="u001",
                               devtst_utt="u009")}
        )
        pairs, violations = build_gold_test_set(tst, pool, catalog)
        assert pairs == []
        assert len(violations) == 1 and "q" in violations[0]


class TestConcatTarget:
    def test_basic_join(self):
        text, boundary = concat_target("Hallo.", "Welt.")
        assert text == "Hallo. <SEP> Welt."
        assert boundary == 2
        assert text.split()[boundary] == "Welt."

    def test_empty_prefix(self):
        text, boundary = concat_target("", "x")
        assert text == "<SEP> x"
        assert boundary == 1

    def test_separator_collision_rejected(self):
        with pytest.raises(ValidationError):
            concat_target("ok", f"bad {SEP_TOKEN} text")
        with pytest.raises(ValidationError):
            concat_target(f"{SEP_TOKEN}", "x")

    def test_boundary_matches_token_positions(self):
        text, boundary = concat_target("ein zwei drei", "vier")
        tokens = text.split()
        assert tokens[boundary - 1] == SEP_TOKEN
        assert tokens[boundary:] == ["vier"]


class TestPairValidation:
    def test_self_pair_rejected(self):
        u = _utt(0, "a b")
        with pytest.raises(ValidationError):
            PrependedPair(example=u, main=u, link_word="a", gold=False)

    def test_gold_requires_shared_word(self):
        with pytest.raises(ValidationError):
            PrependedPair(example=_utt(0, "a b"), main=_utt(1, "c d"),
                          link_word="a", gold=True)


def test_pairs_tsv_roundtrip(tmp_path):
    corpus = _corpus(["w one", "w two", "unique thing"])
    freqs = count_frequencies(corpus)
    pairs = build_prepended_train_set(corpus, freqs, seed=0)
    path = tmp_path / "pairs.tsv"
    write_pairs(pairs, path)
    back = read_pairs(path, corpus, corpus)
    assert [(p.main.id, p.example.id, p.link_word, p.gold) for p in back] == [
        (p.main.id, p.example.id, p.link_word, p.gold) for p in pairs
    ]
