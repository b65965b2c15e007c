"""Regenerates the test fixtures from scikit-image sample data.

Content images are centre-cropped photos; one style image is synthesised.
"""
import os
import sys

import numpy as np
from PIL import Image
import skimage

SIZE = 128
DATA = os.path.join(os.path.dirname(skimage.__file__), "data")
OUT = sys.argv[1] if len(sys.argv) > 1 else "crates/core/tests/fixtures"


def square(name):
    img = Image.open(os.path.join(DATA, name)).convert("RGB")
    side = min(img.size)
    left = (img.width - side) // 2
    top = (img.height - side) // 2
    img = img.crop((left, top, left + side, top + side))
    return img.resize((SIZE, SIZE), Image.LANCZOS)


def swirl():
    y, x = np.mgrid[0:SIZE, 0:SIZE] / SIZE
    r = np.hypot(x - 0.5, y - 0.5)
    t = np.arctan2(y - 0.5, x - 0.5)
    rgb = np.stack(
        [
            0.5 + 0.5 * np.sin(24 * r + 3 * t),
            0.5 + 0.5 * np.sin(17 * x + 9 * np.sin(11 * y)),
            0.5 + 0.5 * np.cos(21 * y - 5 * t),
        ],
        axis=-1,
    )
    return Image.fromarray((rgb * 255).round().astype(np.uint8))


os.makedirs(OUT, exist_ok=True)
square("astronaut.png").save(os.path.join(OUT, "content_astronaut.png"))
square("coffee.png").save(os.path.join(OUT, "content_coffee.png"))
square("chelsea.png").save(os.path.join(OUT, "content_chelsea.png"))
square("hubble_deep_field.jpg").save(os.path.join(OUT, "style_hubble.png"))
square("ihc.png").save(os.path.join(OUT, "style_ihc.png"))
swirl().save(os.path.join(OUT, "style_swirl.png"))
