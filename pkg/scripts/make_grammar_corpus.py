"""Regenerate src/odstega/data/grammar.txt, the template-grammar toy corpus.

Every word in the grammar recurs hundreds of times, so an n-gram model fit on
it has branching successor sets in most contexts. Choices within each word
list are Zipf-weighted rather than uniform: with equal weights the successor
probabilities come out as simple fractions such as 1/12, and arithmetic-coding
paths that start from different payload prefixes realign after a few tokens.

    python scripts/make_grammar_corpus.py
"""

import random
from pathlib import Path

SUBJECTS = ["the fisherman", "the farmer", "the teacher", "the traveler", "the innkeeper", "the keeper",
            "the baker", "the child", "the old man", "the woman", "a stranger", "the librarian"]
VERBS = ["walks to", "looks at", "talks about", "waits near", "thinks about", "sings about",
         "writes about", "dreams of", "sits near", "returns to", "runs past", "remembers"]
OBJECTS = ["the harbor", "the river", "the market", "the mountains", "the old bridge", "the lighthouse",
           "the school", "the valley", "the bakery", "the sea", "the square", "the forest", "the inn",
           "the library", "the boats", "the fields"]
TIMES = ["in the morning", "in the evening", "after the storm", "before the rain", "at night",
         "in the spring", "in the winter", "every day", "on sunday", "in the summer"]
MANNER = ["slowly", "quietly", "again", "often", "happily", "alone", "with a friend", "for a while"]
LINKS = ["and then", "but", "because", "while", "so"]


def pick(rng: random.Random, items: list[str]) -> str:
    return rng.choices(items, weights=[1 / (r + 1.5) for r in range(len(items))])[0]


def clause(rng: random.Random) -> list[str]:
    return [pick(rng, SUBJECTS), pick(rng, VERBS), pick(rng, OBJECTS)]


def sentence(rng: random.Random) -> str:
    words = clause(rng)
    if rng.random() < 0.6:
        words.append(pick(rng, MANNER))
    if rng.random() < 0.6:
        words.append(pick(rng, TIMES))
    if rng.random() < 0.3:
        words += [pick(rng, LINKS), *clause(rng)]
    return " ".join(words) + " ."


def main(n_sentences: int = 3000, seed: int = 7) -> None:
    rng = random.Random(seed)
    text = " ".join(sentence(rng) for _ in range(n_sentences)) + "\n"
    out = Path(__file__).resolve().parents[1] / "src" / "odstega" / "data" / "grammar.txt"
    out.write_text(text, encoding="utf-8")
    print(f"wrote {len(text.split())} words to {out}")


if __name__ == "__main__":
    main()
