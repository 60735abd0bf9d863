import random

import pytest

from cascade_st.core import PipelineConfig, Segment, SentenceRecord, Talk, validate_config

WORDS = ("alpha bravo charlie delta echo foxtrot golf hotel india juliet kilo lima mike "
         "november oscar papa quebec romeo sierra tango uniform victor whiskey yankee zulu").split()
GERMAN = ("eins zwei drei vier fuenf sechs sieben acht neun zehn elf zwoelf haus baum "
          "strasse stadt fluss berg wald feld").split()


def sentence(rng: random.Random, lo=4, hi=12, vocab=WORDS) -> str:
    words = [rng.choice(vocab) for _ in range(rng.randint(lo, hi))]
    words[0] = words[0].capitalize()
    return " ".join(words) + "."


def make_talk(talk_id: str, n_sentences: int, seed: int = 0, with_mt: bool = False) -> Talk:
    """Talk with one gold segment per sentence; segment text equals the source sentence."""
    rng = random.Random(f"{talk_id}/{seed}")
    segs, sents = [], []
    t = 0.0
    for i in range(n_sentences):
        src = sentence(rng)
        ref = sentence(rng, vocab=GERMAN)
        dur = round(rng.uniform(1.0, 5.0), 2)
        segs.append(Segment(round(t, 2), round(t + dur, 2), src))
        t += dur + 0.5
        sents.append(SentenceRecord(i, src, mt=ref.lower() if with_mt else None, ref=ref))
    return Talk(talk_id, audio=f"audio/{talk_id}.wav", duration_s=round(t + 1.0, 2),
                segments=tuple(segs), sentences=tuple(sents))


def make_corpus(n_talks: int, n_sentences: int = 6, seed: int = 0, with_mt: bool = False) -> list[Talk]:
    return [make_talk(f"talk{i:03d}", n_sentences, seed, with_mt) for i in range(n_talks)]


@pytest.fixture
def cfg() -> PipelineConfig:
    return validate_config(parallelism=2)


@pytest.fixture
def oracle_cfg() -> PipelineConfig:
    return validate_config(asr_endpoint="mock:oracle", mt_endpoint="mock:oracle", llm_endpoint="mock:echo",
                           parallelism=2)


ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def criterion():
    """Record one acceptance line; the test still asserts on its own."""
    def record(name: str, ok: bool, detail: str = "") -> bool:
        ACCEPTANCE.append((name, ok, detail))
        print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
