#!/usr/bin/env python3
"""Generate a small synthetic PDF with captioned figures.

The file is built with reportlab (installed via the ``test`` extra), so it
exercises the extractor against an encoder it shares no code with. Each page
carries two colored panels with "Figure N:" captions underneath, plus some
decoy prose that must not be picked up as a caption.
"""

import argparse
import random

from PIL import Image
from reportlab.lib.pagesizes import letter
from reportlab.lib.utils import ImageReader
from reportlab.pdfgen import canvas


def add_figure(c, x, y, number, rng):
    color = tuple(rng.randrange(40, 216) for _ in range(3))
    px_w, px_h = rng.choice([(160, 120), (140, 140), (200, 150)])
    panel = Image.new("RGB", (px_w, px_h), color)
    c.drawImage(ImageReader(panel), x, y, width=150, height=110)
    c.setFont("Helvetica", 10)
    c.drawString(x, y - 16, f"Figure {number}: synthetic panel in color {color}")


def build(path: str, pages: int, seed: int) -> None:
    rng = random.Random(seed)
    c = canvas.Canvas(path, pagesize=letter)
    number = 1
    for _ in range(pages):
        for x in (80, 330):
            add_figure(c, x, 560, number, rng)
            number += 1
        c.setFont("Helvetica", 10)
        c.drawString(80, 200, "The prose on this line must never be mistaken for a caption.")
        c.showPage()
    c.save()
    print(f"wrote {path}: {pages} page(s), {number - 1} captioned figures")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="demo.pdf")
    ap.add_argument("--pages", type=int, default=2)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    build(args.out, args.pages, args.seed)


if __name__ == "__main__":
    main()
