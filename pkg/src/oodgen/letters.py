"""Rendered-glyph OOD set in the style of NotMNIST.

NotMNIST is the letters A-J drawn from many typefaces at 28x28. This module
rebuilds a look-alike from whatever TrueType fonts the machine has, so a
character-shaped OOD set exists without downloading anything. Pillow is
imported lazily; nothing else in the package needs it.
"""

from __future__ import annotations

import glob
import os
from pathlib import Path

import numpy as np

from .data import LabeledDataset

LETTERS = "ABCDEFGHIJ"

_FONT_DIRS = ["/usr/share/fonts", "/usr/local/share/fonts", "~/.fonts"]
# symbol and math-extension faces have no usable Latin capitals
_SKIP = ("Sym", "cmex", "cmsy", "cmmi", "NonUni", "Display")


def find_fonts():
    dirs = [os.path.expanduser(d) for d in _FONT_DIRS]
    try:
        import matplotlib

        dirs.append(os.path.join(os.path.dirname(matplotlib.__file__), "mpl-data", "fonts", "ttf"))
    except ImportError:
        pass
    found = {}
    for d in dirs:
        for path in glob.glob(os.path.join(d, "**", "*.ttf"), recursive=True):
            name = Path(path).name
            if not any(s in name for s in _SKIP):
                found.setdefault(name, path)
    return [found[k] for k in sorted(found)]


def render_letters(n, rng, size=28, letters=LETTERS, fonts=None) -> LabeledDataset:
    """``n`` glyph images with random letter, font, scale and offset; labels index ``letters``."""
    from PIL import Image, ImageDraw, ImageFont

    rng = np.random.default_rng(rng)
    fonts = fonts or find_fonts()
    if not fonts:
        raise RuntimeError("no TrueType fonts found")
    out = np.zeros((n, size * size))
    labels = rng.integers(len(letters), size=n)
    for i in range(n):
        font = ImageFont.truetype(fonts[rng.integers(len(fonts))], int(rng.integers(18, 27)))
        canvas = Image.new("L", (2 * size, 2 * size), 0)
        draw = ImageDraw.Draw(canvas)
        draw.text((size // 2, size // 4), letters[labels[i]], fill=int(rng.integers(180, 256)), font=font)
        box = canvas.getbbox()
        if box is None:
            continue
        glyph = canvas.crop(box)
        # NotMNIST glyphs nearly fill the frame
        scale = rng.uniform(0.7, 0.95) * size / max(glyph.size)
        w, h = max(1, round(glyph.size[0] * scale)), max(1, round(glyph.size[1] * scale))
        glyph = glyph.resize((w, h), Image.BILINEAR)
        frame = Image.new("L", (size, size), 0)
        x0 = int(rng.integers(0, size - w + 1))
        y0 = int(rng.integers(0, size - h + 1))
        frame.paste(glyph, (x0, y0))
        out[i] = np.asarray(frame, dtype=np.float64).reshape(-1) / 255.0
    return LabeledDataset(out, labels, "letters", True, (size, size))
