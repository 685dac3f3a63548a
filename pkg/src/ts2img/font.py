"""Embedded bitmap font for numeric tick labels.

Only the characters needed to print numbers are defined. Each glyph is
drawn on a 5x7 grid and widened to the 6x10 cell by repeating its middle
column and rows 1, 3 and 5, so the stored table below is the single
source of truth for what ends up on screen.
"""
import numpy as np

GLYPH_W = 6
GLYPH_H = 10
SPACING = 1

_SOURCE = {
    "0": (".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."),
    "1": ("..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."),
    "2": (".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"),
    "3": ("#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."),
    "4": ("...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."),
    "5": ("#####", "#....", "####.", "....#", "....#", "#...#", ".###."),
    "6": ("..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."),
    "7": ("#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."),
    "8": (".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."),
    "9": (".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."),
    ".": (".....", ".....", ".....", ".....", ".....", ".##..", ".##.."),
    "-": (".....", ".....", ".....", "#####", ".....", ".....", "....."),
    "+": (".....", "..#..", "..#..", "#####", "..#..", "..#..", "....."),
    "e": (".....", ".....", ".###.", "#...#", "#####", "#....", ".###."),
}

_ROW_MAP = (0, 1, 1, 2, 3, 3, 4, 5, 5, 6)
_COL_MAP = (0, 1, 2, 2, 3, 4)


def _expand(rows):
    grid = np.array([[ch == "#" for ch in row] for row in rows], dtype=np.uint8)
    return grid[np.ix_(_ROW_MAP, _COL_MAP)]


FONT = {ch: _expand(rows) for ch, rows in _SOURCE.items()}


def glyph(ch):
    try:
        return FONT[ch]
    except KeyError:
        raise ValueError(f"no glyph for {ch!r}; supported: {''.join(sorted(FONT))}") from None


def text_width(text):
    n = len(text)
    return n * GLYPH_W + max(n - 1, 0) * SPACING


def text_bitmap(text):
    """Stamp mask of ``text`` as an ``GLYPH_H x text_width`` uint8 array."""
    out = np.zeros((GLYPH_H, text_width(text)), dtype=np.uint8)
    for i, ch in enumerate(text):
        x = i * (GLYPH_W + SPACING)
        out[:, x:x + GLYPH_W] = glyph(ch)
    return out
