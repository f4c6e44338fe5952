"""Embedded 5x7 bitmap font for lead labels and the calibration footer."""

import numpy as np

GLYPH_W = 5
GLYPH_H = 7

_GLYPHS = {
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
    "I": (".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."),
    "V": ("#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."),
    "R": ("####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"),
    "L": ("#....", "#....", "#....", "#....", "#....", "#....", "#####"),
    "F": ("#####", "#....", "#....", "####.", "#....", "#....", "#...."),
    "H": ("#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"),
    "a": (".....", ".....", ".###.", "....#", ".####", "#...#", ".####"),
    "m": (".....", ".....", "##.#.", "#.#.#", "#.#.#", "#...#", "#...#"),
    "s": (".....", ".....", ".####", "#....", ".###.", "....#", "####."),
    "z": (".....", ".....", "#####", "...#.", "..#..", ".#...", "#####"),
    "/": (".....", "....#", "...#.", "..#..", ".#...", "#....", "....."),
    ".": (".....", ".....", ".....", ".....", ".....", ".##..", ".##.."),
    " ": (".....",) * GLYPH_H,
}

GLYPHS = {ch: np.array([[c == "#" for c in row] for row in rows], dtype=bool) for ch, rows in _GLYPHS.items()}


def text_size(text: str, scale: int = 1):
    if not text:
        return 0, 0
    return (len(text) * (GLYPH_W + 1) - 1) * scale, GLYPH_H * scale


def draw_text(pixels: np.ndarray, x: int, y: int, text: str, color, scale: int = 1) -> None:
    """Stamp ``text`` into an HxWx3 raster with its top-left corner at (x, y); clipped at the edges."""
    height, width = pixels.shape[:2]
    for i, ch in enumerate(text):
        glyph = GLYPHS.get(ch, GLYPHS[" "])
        if scale > 1:
            glyph = np.kron(glyph, np.ones((scale, scale), dtype=bool))
        gx = x + i * (GLYPH_W + 1) * scale
        x0, y0 = max(gx, 0), max(y, 0)
        x1, y1 = min(gx + glyph.shape[1], width), min(y + glyph.shape[0], height)
        if x0 >= x1 or y0 >= y1:
            continue
        crop = glyph[y0 - y : y1 - y, x0 - gx : x1 - gx]
        pixels[y0:y1, x0:x1][crop] = color
