import pytest
from hypothesis import given
from hypothesis import strategies as st

from vidcap.errors import DataError, ParameterError
from vidcap.text import (
    BOS,
    EOS,
    PAD,
    UNK,
    Vocabulary,
    build_vocab,
    decode,
    encode,
    tokenize,
)


class TestTokenize:
    def test_case_and_punctuation(self):
        assert tokenize("A man is Running.") == ["a", "man", "is", "running"]

    def test_empty(self):
        assert tokenize("") == []

    def test_whitespace_collapse(self):
        assert tokenize("rubix  cube!!") == ["rubix", "cube"]

    def test_internal_apostrophe_kept(self):
        assert tokenize("it isn't 'quoted'") == ["it", "isn't", "quoted"]

    @given(st.text())
    def test_deterministic_and_lowercase(self, s):
        toks = tokenize(s)
        assert toks == tokenize(s)
        assert all(t == t.lower() for t in toks)


class TestBuildVocab:
    def test_threshold(self):
        v = build_vocab(["a a a", "a b"], min_count=2)
        assert v.id_of("a") >= 4
        assert v.id_of("b") == UNK

    def test_min_count_one_keeps_all(self):
        v = build_vocab(["x y", "z"], min_count=1)
        assert all(v.id_of(t) != UNK for t in ("x", "y", "z"))

    def test_frequency_then_lexicographic_order(self):
        v = build_vocab(["b b c c a", "c"], min_count=1)
        # c: 3, b: 2, a: 1
        assert v.id_to_token[4:] == ["c", "b", "a"]

    def test_empty_corpus_only_reserved(self):
        v = build_vocab([], min_count=5)
        assert len(v) == 4

    def test_deterministic(self):
        corpus = ["the cat sat", "the dog ran", "a cat ran"]
        assert build_vocab(corpus, 1).id_to_token == build_vocab(corpus, 1).id_to_token

    def test_bad_min_count(self):
        with pytest.raises(ParameterError):
            build_vocab(["a"], min_count=0)


class TestEncodeDecode:
    def test_known_token(self):
        v = build_vocab(["a a a a a"], min_count=1)
        assert encode(["a"], v) == [BOS, v.id_of("a"), EOS]

    def test_unknown_token(self):
        v = build_vocab(["a a a a a"], min_count=1)
        assert encode(["zzz"], v) == [BOS, UNK, EOS]

    def test_round_trip(self):
        v = build_vocab(["a man is running"], min_count=1)
        text = "a man is running"
        assert decode(encode(tokenize(text), v), v) == text

    def test_decode_drops_reserved(self):
        v = build_vocab(["hello world"], min_count=1)
        ids = [PAD, BOS, v.id_of("hello"), UNK, v.id_of("world"), EOS, PAD]
        assert decode(ids, v) == "hello world"

    def test_decode_out_of_range(self):
        v = build_vocab([], min_count=1)
        with pytest.raises(DataError):
            decode([99], v)

    @given(st.lists(st.sampled_from(["cat", "dog", "runs", "sits"]), min_size=1, max_size=8))
    def test_round_trip_property(self, words):
        v = build_vocab(["cat dog runs sits"], min_count=1)
        text = " ".join(words)
        assert decode(encode(tokenize(text), v), v) == text


class TestSerialization:
    def test_save_load_round_trip(self, tmp_path):
        v = build_vocab(["the cat sat on the mat"], min_count=1)
        path = tmp_path / "vocab.tsv"
        v.save(path)
        loaded = Vocabulary.load(path)
        assert loaded.id_to_token == v.id_to_token
        content = path.read_text(encoding="utf-8")
        assert content.startswith("<pad>\t0\n<bos>\t1\n<eos>\t2\n<unk>\t3\n")

    def test_load_rejects_gap(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("<pad>\t0\n<bos>\t1\n<eos>\t2\n<unk>\t3\nword\t9\n")
        with pytest.raises(DataError):
            Vocabulary.load(path)
