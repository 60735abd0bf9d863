import pytest
from hypothesis import given, settings, strategies as st

from cascade_st.backends import TablePunctuator
from cascade_st.core import DataError
from cascade_st.sentseg import SegmentationRules, load_rules, restore_punctuation, split_sentences


def test_basic_split():
    assert split_sentences("Hello there. How are you? Fine!") == ["Hello there.", "How are you?", "Fine!"]


def test_abbreviations_do_not_split():
    assert split_sentences("Dr. Smith arrived. He sat down.") == ["Dr. Smith arrived.", "He sat down."]
    assert split_sentences("We met Mr. Jones, e.g. Yesterday.") == ["We met Mr. Jones, e.g. Yesterday."]


def test_lowercase_continuation_does_not_split():
    assert split_sentences("The value is 3.5 today. and more") == ["The value is 3.5 today. and more"]


def test_numbers_start_sentences():
    assert split_sentences("It ended. 2024 was good.") == ["It ended.", "2024 was good."]


def test_quotes_and_brackets():
    assert split_sentences('He said "Stop." Then left.') == ['He said "Stop."', "Then left."]
    assert split_sentences("Look (there.) «Next» one.") == ["Look (there.)", "«Next» one."]


def test_empty_text():
    assert split_sentences("   ") == []


def test_min_tokens_merges_fragments():
    rules = SegmentationRules(min_sentence_tokens=3)
    # "Yes." joins the next sentence; the trailing "Ok." joins the previous one
    assert split_sentences("Yes. I think so too. Ok.", rules) == ["Yes. I think so too. Ok."]
    assert split_sentences("Yes. I think so. We agree here.", rules) == ["Yes. I think so.", "We agree here."]


def test_rules_file(tmp_path):
    (tmp_path / "abbr.txt").write_text("# extra\nApprox.\n\nDept.\n")
    rules = load_rules(tmp_path / "abbr.txt")
    assert "Dept." in rules.abbreviations and "Dr." in rules.abbreviations
    assert split_sentences("The Dept. Head spoke.", rules) == ["The Dept. Head spoke."]


def test_rules_reject_bad_abbreviation(tmp_path):
    (tmp_path / "abbr.txt").write_text("Dept\n")
    with pytest.raises(DataError):
        load_rules(tmp_path / "abbr.txt")
    with pytest.raises(DataError):
        load_rules(tmp_path / "missing.txt")


def test_restore_punctuation():
    assert restore_punctuation("hello world") == "hello world"
    assert restore_punctuation("hello world", TablePunctuator({"hello world": "Hello world."})) == "Hello world."
    with pytest.raises(DataError):
        restore_punctuation("  ")


text_st = st.lists(st.sampled_from(["Hello.", "world", "Dr.", "Smith", "ok?", "Yes!", "2.", "e.g.", "x"]),
                   max_size=20).map(" ".join)


@settings(max_examples=200)
@given(text_st)
def test_split_preserves_tokens(text):
    sents = split_sentences(text)
    assert " ".join(sents).split() == text.split()
    assert all(s == s.strip() and s for s in sents)


@settings(max_examples=200)
@given(text_st, st.integers(1, 4))
def test_min_tokens_respected(text, k):
    sents = split_sentences(text, SegmentationRules(min_sentence_tokens=k))
    if len(sents) > 1:
        assert all(len(s.split()) >= k for s in sents)
