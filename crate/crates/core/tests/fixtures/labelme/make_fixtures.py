#!/usr/bin/env python3
"""Regenerates the polygon-annotation fixtures and their golden masks.

The golden masks come from a brute-force even-odd test at every pixel centre
in exact rational arithmetic, independent of the library's scanline fill.
Vertices are clamped to the image rectangle first and later shapes overwrite
earlier ones. The script refuses fixtures where an edge crosses a pixel
centre's row within 1e-6 of that centre, where float rounding decides.

Usage: python3 make_fixtures.py   (writes next to this file)
"""

import json
import os
import random
from fractions import Fraction

from PIL import Image

HERE = os.path.dirname(os.path.abspath(__file__))
LABELS = [
    "background", "Tooth", "Bone", "Pulp", "Root Canal Filling", "Denture Crown",
    "Dental Fillings", "Implant", "Orthodontic Devices", "Apical Periodontitis",
]

FIXTURES = {
    "basic": dict(
        h=40, w=48, image="basic.png", typed=True,
        shapes=[
            ("Bone", [(0, 20), (48, 22.5), (48, 40), (0, 40)]),
            ("Tooth", [(6, 4), (20, 3.25), (24, 12), (14.75, 30), (10, 18), (3, 26)]),
            ("Pulp", [(11.2, 9), (16.6, 8), (15, 17.3)]),
            ("Implant", [(30, 6), (44, 6.5), (41.3, 33.7), (33, 30)]),
        ],
    ),
    "pentagram": dict(
        h=32, w=32, image="pentagram.png", typed=True,
        shapes=[
            ("Denture Crown", [(16.1, 1.3), (25.3, 29.2), (1.7, 11.9), (30.2, 12.1), (6.9, 29.4)]),
        ],
    ),
    "clamped": dict(
        h=24, w=36, image="clamped.png", typed=True,
        shapes=[
            ("Dental Fillings", [(-10, -4.25), (20.3, -6), (14.2, 15.1), (-3.1, 18.6)]),
            ("Orthodontic Devices", [(30, 10)]),
            ("Apical Periodontitis", [(28.4, 14.3), (50, 17.2), (41, 40), (25.1, 29)]),
            ("Root Canal Filling", [(8, 20), (12, 20)]),
        ],
    ),
    "legacy": dict(
        h=20, w=20, image="C:\\scans\\legacy.png", typed=False,
        shapes=[
            ("Pulp", [(2.25, 2.25), (17.6, 3.1), (9.4, 17.2)]),
            ("Bone", [(5, 5), (9, 5), (9, 9), (5, 9)]),
        ],
    ),
}

# Same document with a label missing from the default map, in its own directory.
UNKNOWN = dict(
    h=16, w=16, image="stray.png", typed=True,
    shapes=[
        ("Tooth", [(1, 1), (10, 1.5), (9, 12.3)]),
        ("Calculus", [(4.1, 4.1), (14, 4.6), (13, 14)]),
    ],
)


def clamp(pts, h, w):
    return [(min(max(Fraction(x), 0), w), min(max(Fraction(y), 0), h)) for x, y in pts]


def inside(pts, cx, cy):
    crossings = 0
    n = len(pts)
    for i in range(n):
        (x0, y0), (x1, y1) = pts[i], pts[(i + 1) % n]
        if (y0 > cy) != (y1 > cy):
            x = x0 + (x1 - x0) * (cy - y0) / (y1 - y0)
            if abs(x - cx) < Fraction(1, 10**6):
                raise SystemExit(f"edge crosses pixel centre ({cx}, {cy}) within 1e-6")
            if x > cx:
                crossings += 1
    return crossings % 2 == 1


def golden(fx, skip_unknown=False):
    h, w = fx["h"], fx["w"]
    mask = [[0] * w for _ in range(h)]
    for label, pts in fx["shapes"]:
        if label not in LABELS:
            if skip_unknown:
                continue
            raise SystemExit(f"unknown label {label}")
        if len(pts) < 3:
            continue
        poly = clamp(pts, h, w)
        k = LABELS.index(label)
        for r in range(h):
            for c in range(w):
                if inside(poly, Fraction(2 * c + 1, 2), Fraction(2 * r + 1, 2)):
                    mask[r][c] = k
    return mask


def document(fx):
    shapes = []
    for label, pts in fx["shapes"]:
        s = {"label": label, "points": [[x, y] for x, y in pts], "group_id": None, "flags": {}}
        if fx["typed"]:
            s["shape_type"] = "polygon"
        shapes.append(s)
    return {
        "version": "5.2.1", "flags": {}, "shapes": shapes, "imagePath": fx["image"],
        "imageData": None, "imageHeight": fx["h"], "imageWidth": fx["w"],
    }


def write_image(path, h, w, seed):
    rng = random.Random(seed)
    img = Image.new("RGB", (w, h))
    img.putdata([(rng.randrange(256), rng.randrange(256), rng.randrange(256)) for _ in range(h * w)])
    img.save(path)


def write_mask(path, mask):
    h, w = len(mask), len(mask[0])
    img = Image.new("L", (w, h))
    img.putdata([v for row in mask for v in row])
    img.save(path)


def main():
    for d in ["annotations", "images", "golden", "unknown"]:
        os.makedirs(os.path.join(HERE, d), exist_ok=True)
    for seed, (name, fx) in enumerate(sorted(FIXTURES.items())):
        with open(os.path.join(HERE, "annotations", name + ".json"), "w") as f:
            json.dump(document(fx), f, indent=1)
        write_image(os.path.join(HERE, "images", name + ".png"), fx["h"], fx["w"], seed)
        write_mask(os.path.join(HERE, "golden", name + ".png"), golden(fx))
    with open(os.path.join(HERE, "unknown", "stray.json"), "w") as f:
        json.dump(document(UNKNOWN), f, indent=1)
    write_image(os.path.join(HERE, "images", "stray.png"), UNKNOWN["h"], UNKNOWN["w"], 99)
    write_mask(os.path.join(HERE, "golden", "stray_skip.png"), golden(UNKNOWN, skip_unknown=True))


if __name__ == "__main__":
    main()
