#!/usr/bin/env python3
"""Generate the bundled synthetic digit corpus in IDX format.

Renders DejaVu Sans digit glyphs with random rotation, scale, weight, and
offset onto a dark background, anti-aliased down to the target resolution.
The output mimics the classic handwritten-digit IDX layout (magic 2051 for
images, 2049 for labels, big-endian headers) so the same loaders work on
either corpus.

Outputs (relative to the repository root):
  crates/core/tests/data/digits/train-images-idx3-ubyte   2000 x 28x28
  crates/core/tests/data/digits/train-labels-idx1-ubyte
  crates/core/tests/data/digits/test-images-idx3-ubyte     500 x 28x28
  crates/core/tests/data/digits/test-labels-idx1-ubyte
  crates/cli/tests/data/tiny/train-images-idx3-ubyte        40 x 16x16
  crates/cli/tests/data/tiny/train-labels-idx1-ubyte
  crates/cli/tests/data/tiny/test-images-idx3-ubyte          8 x 16x16
  crates/cli/tests/data/tiny/test-labels-idx1-ubyte

Deterministic: fixed RNG seeds, no network access, fonts bundled with
matplotlib. Requires numpy + matplotlib (dev tooling only; the generated
files are committed so the test suite has no Python dependency).
"""

import struct
import sys
from pathlib import Path

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

SUPERSAMPLE = 4


def render_digit(digit, rng, side):
    """Render one digit glyph to a side x side uint8 grayscale image."""
    px = side * SUPERSAMPLE
    fig = plt.figure(figsize=(1.0, 1.0), dpi=px)
    ax = fig.add_axes([0, 0, 1, 1])
    ax.set_axis_off()
    ax.set_facecolor("white")
    fontsize = rng.uniform(0.60, 0.69) * px
    rotation = rng.uniform(-6.0, 6.0)
    x = 0.5 + rng.uniform(-0.03, 0.03)
    y = 0.47 + rng.uniform(-0.03, 0.03)
    weight = "bold" if rng.random() < 0.3 else "normal"
    ax.text(
        x,
        y,
        str(digit),
        fontsize=fontsize,
        rotation=rotation,
        ha="center",
        va="center",
        family="DejaVu Sans",
        weight=weight,
        color="black",
    )
    fig.canvas.draw()
    buf = np.asarray(fig.canvas.buffer_rgba())[:, :, 0].astype(np.float64)
    plt.close(fig)
    # White-on-black convention, block-mean anti-aliasing down to `side`.
    inv = 255.0 - buf
    img = inv.reshape(side, SUPERSAMPLE, side, SUPERSAMPLE).mean(axis=(1, 3))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def balanced_labels(n, rng):
    reps = (n + 9) // 10
    labels = np.tile(np.arange(10, dtype=np.uint8), reps)[:n]
    return rng.permutation(labels)


def write_idx_images(path, images):
    n, h, w = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, h, w))
        f.write(images.tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def make_split(out_dir, prefix, n, side, rng):
    labels = balanced_labels(n, rng)
    images = np.stack([render_digit(int(d), rng, side) for d in labels])
    out_dir.mkdir(parents=True, exist_ok=True)
    write_idx_images(out_dir / f"{prefix}-images-idx3-ubyte", images)
    write_idx_labels(out_dir / f"{prefix}-labels-idx1-ubyte", labels)
    print(f"{out_dir}/{prefix}: {n} samples {side}x{side}")


def main():
    root = Path(__file__).resolve().parent.parent
    digits = root / "crates" / "core" / "tests" / "data" / "digits"
    tiny = root / "crates" / "cli" / "tests" / "data" / "tiny"

    rng = np.random.default_rng(20260822)
    make_split(digits, "train", 2000, 28, rng)
    make_split(digits, "test", 500, 28, rng)

    rng_tiny = np.random.default_rng(777)
    make_split(tiny, "train", 40, 16, rng_tiny)
    make_split(tiny, "test", 8, 16, rng_tiny)


if __name__ == "__main__":
    sys.exit(main())
