#!/usr/bin/env python3
"""Write data/charset.txt: every character an accepted transcript may use."""

import pathlib


def ranges():
    yield range(0x20, 0x7F)          # printable ASCII, space included
    yield range(0xC0, 0x100)         # Latin-1 letters
    yield range(0x100, 0x180)        # Latin Extended-A
    yield [0x218, 0x219, 0x21A, 0x21B]  # Ș ș Ț ț
    yield range(0x386, 0x3CF)        # Greek
    yield [0x401, 0x404, 0x406, 0x407, 0x451, 0x454, 0x456, 0x457, 0x490, 0x491]
    yield range(0x410, 0x450)        # Cyrillic А..я
    yield [ord(c) for c in "«»„“”‘’–—…·¡¿"]


def main():
    skip = {0xD7, 0xF7, 0x387, 0x38B, 0x38D, 0x3A2}
    chars = sorted({cp for r in ranges() for cp in r} - skip)
    out = pathlib.Path(__file__).resolve().parent.parent / "data" / "charset.txt"
    with out.open("w", encoding="utf-8") as f:
        for cp in chars:
            f.write(f"\\u{cp:04X}\n" if cp == 0x20 else chr(cp) + "\n")
    print(f"{len(chars)} characters -> {out}")


if __name__ == "__main__":
    main()
