"""Shallow verb-object extraction from sentence descriptions.

A small rule-based pipeline: lexicon-driven lemmatization, a human-subject
filter, and verb -> nearest-following-noun-phrase-head pairing. No external
parser; the lexicon data files are the only knowledge source.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

_WORD_RE = re.compile(r"[a-z]+(?:'[a-z]+)?|[.,;:!?]")
_PUNCT = {".", ",", ";", ":", "!", "?"}


@dataclass(frozen=True, order=True)
class VOPair:
    verb: str
    object: str

    def __post_init__(self):
        if not self.verb or not self.object:
            raise ValueError("VOPair parts must be non-empty")


@dataclass
class Lexicon:
    verbs: set[str]
    human_subjects: set[str]
    nouns: set[str]
    lemma_exceptions: dict[str, str]
    stopwords: set[str]
    inflections: dict[str, str] = field(default_factory=dict)  # form -> lemma

    def __post_init__(self):
        # inflection table entries behave like exceptions during lemmatization
        for form, lemma in self.inflections.items():
            self.lemma_exceptions.setdefault(form, lemma)


def load_lexicon(directory) -> Lexicon:
    """Read the five lexicon data files from `directory`."""
    d = Path(directory)
    verbs: set[str] = set()
    inflections: dict[str, str] = {}
    for line in _read_lines(d / "verbs.tsv"):
        parts = line.split("\t")
        lemma = parts[0]
        verbs.add(lemma)
        if len(parts) > 1 and parts[1]:
            for form in parts[1].split(","):
                inflections[form] = lemma
    humans = set(_read_lines(d / "humans.txt"))
    nouns = set(_read_lines(d / "nouns.txt"))
    exceptions = {}
    for line in _read_lines(d / "lemma_exceptions.tsv"):
        form, lemma = line.split("\t")
        exceptions[form] = lemma
    stopwords = set(_read_lines(d / "stopwords.txt"))
    return Lexicon(verbs=verbs, human_subjects=humans, nouns=nouns,
                   lemma_exceptions=exceptions, stopwords=stopwords,
                   inflections=inflections)


def _read_lines(path: Path) -> list[str]:
    out = []
    for raw in path.read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if line and not line.startswith("#"):
            out.append(line)
    return out


def tokenize(text: str) -> list[str]:
    """Lowercase word and punctuation tokens; punctuation acts as a phrase
    boundary downstream."""
    return _WORD_RE.findall(text.lower())


def lemmatize(word: str, lexicon: Lexicon) -> str:
    """Map an inflected token to its lemma. Total: unknown forms pass through."""
    if word in lexicon.lemma_exceptions:
        return lexicon.lemma_exceptions[word]
    vocab = lexicon.verbs | lexicon.nouns
    if word in vocab:
        return word
    if word.endswith("ing") and len(word) > 5:
        stem = word[:-3]
        for cand in _stem_variants(stem):
            if cand in vocab:
                return cand
    if word.endswith("ied") and len(word) > 4:
        cand = word[:-3] + "y"
        if cand in vocab:
            return cand
    if word.endswith("ies") and len(word) > 4:
        cand = word[:-3] + "y"
        if cand in vocab:
            return cand
    if word.endswith("es") and len(word) > 3:
        if word[:-2] in vocab:
            return word[:-2]
    if word.endswith("ed") and len(word) > 3:
        stem = word[:-2]
        for cand in _stem_variants(stem):
            if cand in vocab:
                return cand
    if word.endswith("s") and not word.endswith("ss") and len(word) > 2:
        if word[:-1] in vocab:
            return word[:-1]
    return word


def _stem_variants(stem: str) -> list[str]:
    cands = [stem, stem + "e"]
    if len(stem) >= 2 and stem[-1] == stem[-2]:
        cands.append(stem[:-1])  # doubled final consonant: running -> run
    return cands


def _is_verb_token(token: str, lemma: str, lexicon: Lexicon) -> bool:
    # Base forms shared with nouns (bat, brush, watch, ...) are read as nouns;
    # an inflected surface form is unambiguous evidence of verbal use.
    if lemma not in lexicon.verbs:
        return False
    if token != lemma:
        return True
    return lemma not in lexicon.nouns


def has_human_subject(description: str, lexicon: Lexicon) -> bool:
    """True iff a human-subject token precedes the first verb token."""
    tokens = tokenize(description)
    for tok in tokens:
        if tok in _PUNCT:
            continue
        lemma = lemmatize(tok, lexicon)
        if _is_verb_token(tok, lemma, lexicon):
            return False  # reached a verb with no human subject before it
        if lemma in lexicon.human_subjects:
            return _has_verb(tokens, lexicon)
    return False


def _has_verb(tokens: list[str], lexicon: Lexicon) -> bool:
    for tok in tokens:
        if tok in _PUNCT:
            continue
        if _is_verb_token(tok, lemmatize(tok, lexicon), lexicon):
            return True
    return False


def extract_vo(description: str, lexicon: Lexicon) -> list[VOPair]:
    """Pair each verb with the head noun of the nearest following noun phrase.

    The head is the last noun before the next verb, punctuation or end of
    sentence; stopwords and unknown words are skipped. Verbs with no
    following noun yield no pair.
    """
    tokens = tokenize(description)
    n = len(tokens)
    kinds = []  # parallel list: ("punct"|"verb"|"noun"|"other", lemma)
    for tok in tokens:
        if tok in _PUNCT:
            kinds.append(("punct", tok))
            continue
        lemma = lemmatize(tok, lexicon)
        if _is_verb_token(tok, lemma, lexicon):
            kinds.append(("verb", lemma))
        elif lemma in lexicon.nouns and tok not in lexicon.stopwords:
            kinds.append(("noun", lemma))
        else:
            kinds.append(("other", lemma))

    pairs: list[VOPair] = []
    for i, (kind, verb_lemma) in enumerate(kinds):
        if kind != "verb":
            continue
        head = None
        for j in range(i + 1, n):
            k, lemma = kinds[j]
            if k in ("verb", "punct"):
                break
            if k == "noun":
                head = lemma
        if head is not None:
            pairs.append(VOPair(verb=verb_lemma, object=head))
    return pairs
