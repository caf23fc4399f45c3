"""Regenerate tests/data/face64.ppm, the 64x64 RGB image used by the tests.

A 200x200 face crop of scikit-image's astronaut photo, area-resized to
64x64 and rounded to integers.
"""

from pathlib import Path

from skimage import data, transform

from peel.imageio import write_image

OUT = Path(__file__).resolve().parents[1] / "tests" / "data" / "face64.ppm"


def main():
    crop = data.astronaut()[10:210, 140:340]
    img = transform.resize(crop, (64, 64), anti_aliasing=True, preserve_range=True)
    n = write_image(OUT, img.transpose(2, 0, 1).round())
    print(f"wrote {OUT} ({n} clamped)")


if __name__ == "__main__":
    main()
