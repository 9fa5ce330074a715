"""Encodes a fixed corpus with the Hugging Face `tokenizers` byte-level BPE
(same vocab.json/merges.txt as assets/tokenizers/gpt2) and stores the ids."""

import json
import sys
from pathlib import Path

from tokenizers import Tokenizer, models, pre_tokenizers

CORPUS = [
    "Hello world",
    "When Mary and John went to the store, John gave a drink to",
    "The war lasted from the year 1732 to the year 17",
    "The Central Intelligence Agency (",
    "On the table, I see a red pencil, a blue cup, and a green ball. What color is the cup? Answer:",
    "The apple is in Box F, the car is in Box Q. Box F contains the",
    "  leading spaces and trailing   ",
    "tabs\tand\nnewlines\n\n  mixed",
    "I'm we're they've she'll he'd it's don't",
    "numbers 12345 67.89 and 3rd",
    "punctuation!!! ???... ---",
    "café naïve über 日本語 \U0001F642 emoji",
    "x=1; y=[2,3]; print(x+y)",
    "def f(a, b):\n    return a + b\n",
    "Let's test   multiple    spaces",
    " ",
    "a",
    "Ångström",
]


def main(out):
    d = Path(__file__).resolve().parents[2] / "assets" / "tokenizers" / "gpt2"
    tok = Tokenizer(models.BPE.from_file(str(d / "vocab.json"), str(d / "merges.txt")))
    tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
    cases = [{"text": text, "ids": tok.encode(text).ids} for text in CORPUS]
    Path(out).write_text(json.dumps({"cases": cases}, ensure_ascii=False, indent=1))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/data/gpt2_tokenizer_reference.json")
