#!/usr/bin/env python3
"""Write data/histograms/<lang>.hist, one character per line.

Each set is the language's alphabet (both cases), digits and common
punctuation. With --seed-corpus DIR, characters that make up at least
--min-share of DIR/<lang>.txt are added as well.
"""

import argparse
import collections
import pathlib
import string

LATIN = string.ascii_lowercase

ALPHABETS = {
    "bg": "абвгдежзийклмнопрстуфхцчшщъьюя",
    "cs": LATIN + "áčďéěíňóřšťúůýž",
    "da": LATIN + "æøåé",
    "de": LATIN + "äöüß",
    "el": "αβγδεζηθικλμνξοπρσςτυφχψωάέήίόύώϊϋΐΰ",
    "en": LATIN,
    "es": LATIN + "áéíñóúü",
    "et": LATIN + "äöõüšž",
    "fi": LATIN + "äöåšž",
    "fr": LATIN + "àâæçéèêëîïôœùûüÿ",
    "hr": LATIN + "čćđšž",
    "hu": LATIN + "áéíóöőúüű",
    "it": LATIN + "àèéìíîòóùú",
    "lt": LATIN + "ąčęėįšųūž",
    "lv": LATIN + "āčēģīķļņšūž",
    "mt": LATIN + "àèìòùċġħż",
    "nl": LATIN + "áéèëïóöüĳ",
    "pl": LATIN + "ąćęłńóśźż",
    "pt": LATIN + "áâãàçéêíóôõú",
    "ro": LATIN + "ăâîșțşţ",
    "ru": "абвгдеёжзийклмнопрстуфхцчшщъыьэюя",
    "sk": LATIN + "áäčďéíĺľňóôŕšťúýž",
    "sl": LATIN + "čšž",
    "sv": LATIN + "åäöé",
    "uk": "абвгґдеєжзиіїйклмнопрстуфхцчшщьюя",
}

SHARED = string.digits + ".,;:!?'\"-()"
EXTRA_PUNCT = {
    "bg": "„“«»",
    "cs": "„“",
    "da": "»«",
    "de": "„“»«",
    "el": "«»;·",
    "es": "¡¿«»",
    "fr": "«»’",
    "it": "«»’",
    "pl": "„”«»",
    "ro": "„”«»",
    "ru": "«»„“",
    "uk": "«»’",
}


def build(lang, seed_text, min_share):
    chars = set()
    for c in ALPHABETS[lang]:
        chars.add(c)
        chars.update(c.upper())
    chars.update(SHARED)
    chars.update(EXTRA_PUNCT.get(lang, ""))
    if seed_text:
        counts = collections.Counter(c for c in seed_text if not c.isspace())
        total = sum(counts.values())
        chars.update(c for c, n in counts.items() if n / total >= min_share)
    return sorted(c for c in chars if len(c) == 1 and not c.isspace())


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    root = pathlib.Path(__file__).resolve().parent.parent
    ap.add_argument("--out", type=pathlib.Path, default=root / "data" / "histograms")
    ap.add_argument("--seed-corpus", type=pathlib.Path)
    ap.add_argument("--min-share", type=float, default=1e-4)
    args = ap.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    for lang in sorted(ALPHABETS):
        seed = None
        if args.seed_corpus and (args.seed_corpus / f"{lang}.txt").exists():
            seed = (args.seed_corpus / f"{lang}.txt").read_text(encoding="utf-8")
        chars = build(lang, seed, args.min_share)
        (args.out / f"{lang}.hist").write_text("".join(c + "\n" for c in chars), encoding="utf-8")
        print(f"{lang}: {len(chars)} characters")


if __name__ == "__main__":
    main()
