from __future__ import annotations

import re
from typing import Dict

# Plural -> singular for nouns the suffix rules get wrong. Invariant nouns map to themselves.
IRREGULAR_SINGULAR: Dict[str, str] = {
    "aircraft": "aircraft",
    "aircrafts": "aircraft",
    "people": "person",
    "men": "man",
    "women": "woman",
    "buses": "bus",
    "series": "series",
    "species": "species",
    "sheep": "sheep",
    "fish": "fish",
    "deer": "deer",
    "gas": "gas",
    "lens": "lens",
    "chassis": "chassis",
}

IRREGULAR_PLURAL: Dict[str, str] = {
    "aircraft": "aircraft",
    "person": "people",
    "man": "men",
    "woman": "women",
    "series": "series",
    "species": "species",
    "sheep": "sheep",
    "fish": "fish",
    "deer": "deer",
    "chassis": "chassis",
}

_SPACES = re.compile(r"\s+")


def _singular_word(word: str) -> str:
    if word in IRREGULAR_SINGULAR:
        return IRREGULAR_SINGULAR[word]
    if len(word) > 3 and word.endswith("ies"):
        return word[:-3] + "y"
    for suffix in ("ches", "shes", "sses", "xes", "zes"):
        if word.endswith(suffix):
            return word[:-2]
    if len(word) > 2 and word.endswith("s") and not word.endswith("ss") and not word.endswith("us"):
        return word[:-1]
    return word


def normalize_class_label(label: str) -> str:
    """Lowercase, trim, collapse inner whitespace and underscores, singularize the head noun.

    "Oil_Tanks" -> "oil tank", " Ships " -> "ship", "Aircraft" -> "aircraft".
    """
    text = _SPACES.sub(" ", str(label or "").replace("_", " ").strip().lower())
    if not text:
        return ""
    words = text.split(" ")
    words[-1] = _singular_word(words[-1])
    return " ".join(words)


def pluralize(label: str) -> str:
    words = label.split(" ")
    head = words[-1]
    if head in IRREGULAR_PLURAL:
        plural = IRREGULAR_PLURAL[head]
    elif head.endswith(("s", "x", "z", "ch", "sh")):
        plural = head + "es"
    elif len(head) > 1 and head.endswith("y") and head[-2] not in "aeiou":
        plural = head[:-1] + "ies"
    else:
        plural = head + "s"
    words[-1] = plural
    return " ".join(words)
