"""Render a small gallery of shapes to .sqri files with PGM previews.

Usage: python scripts/render_samples.py --out renders/ [--size 256]
"""

import argparse
from pathlib import Path

from sqrec.geometry import SuperquadricParams
from sqrec.rendering import (RenderConfig, render_range_image, write_pgm,
                             write_range_image)

GALLERY = {
    "sphere": SuperquadricParams(50, 50, 50, 1.0, 1.0, 128, 128, 128),
    "box": SuperquadricParams(55, 40, 35, 0.1, 0.1, 128, 128, 128),
    "cylinder": SuperquadricParams(35, 35, 60, 0.1, 1.0, 128, 128, 128),
    "pillow": SuperquadricParams(60, 45, 25, 0.3, 0.9, 128, 128, 128),
    "offside": SuperquadricParams(45, 30, 50, 0.6, 0.4, 80, 170, 110),
}


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="renders")
    ap.add_argument("--size", type=int, default=256)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = RenderConfig(width=args.size, height=args.size)
    for name, params in GALLERY.items():
        img = render_range_image(params, cfg)
        write_range_image(img, out / f"{name}.sqri")
        write_pgm(img, out / f"{name}.pgm")
        print(f"{name}: {img.nonzero_count()} foreground pixels")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
