#!/usr/bin/env python3
"""Write the desk-scale datasets used by einv as IDX files.

Three datasets are produced under DATA_DIR (default: $EIL_DATA_DIR or ./data):

  mnist/           real MNIST digits.  Uses full IDX files if they are already
                   present; otherwise writes the 5,000-digit subset bundled with
                   mlxtend, split 4,000 train / 1,000 test (stratified).
  letters-synth/   handwriting-like letter glyphs (26 classes, labels 1..26 like
                   EMNIST letters) rendered from the system TrueType fonts with
                   random affine jitter and stroke width.  Stands in for EMNIST
                   letters when that corpus is not available offline.
  natural-patches/ 28x28 grayscale crops of the scikit-image sample photographs,
                   one class per source photograph.  Used to train the generic
                   (non-digit) feature extractor.

All writers are deterministic for a given --seed.
"""

import argparse
import glob
import os
import struct
import sys

import numpy as np


def write_idx_images(path, images):
    images = np.ascontiguousarray(images, dtype=np.uint8)
    n, h, w = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, h, w))
        f.write(images.tobytes())


def write_idx_labels(path, labels):
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, labels.shape[0]))
        f.write(labels.tobytes())


def write_split(out_dir, prefix, images, labels):
    os.makedirs(out_dir, exist_ok=True)
    write_idx_images(os.path.join(out_dir, f"{prefix}-images-idx3-ubyte"), images)
    write_idx_labels(os.path.join(out_dir, f"{prefix}-labels-idx1-ubyte"), labels)


def stratified_split(labels, per_class_test, rng):
    test = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        rng.shuffle(idx)
        test.extend(idx[:per_class_test].tolist())
    test = np.array(sorted(test))
    train = np.setdiff1d(np.arange(labels.shape[0]), test)
    return train, test


def prepare_mnist(data_dir, rng):
    out = os.path.join(data_dir, "mnist")
    if os.path.exists(os.path.join(out, "train-images-idx3-ubyte")):
        print(f"mnist: found existing IDX files in {out}")
        return
    try:
        from mlxtend.data import mnist_data
    except ImportError:
        sys.exit("mnist: no IDX files and mlxtend is not installed (pip install mlxtend)")
    x, y = mnist_data()
    x = x.reshape(-1, 28, 28).round().astype(np.uint8)
    y = y.astype(np.uint8)
    train, test = stratified_split(y, 100, rng)
    rng.shuffle(train)
    write_split(out, "train", x[train], y[train])
    write_split(out, "t10k", x[test], y[test])
    print(f"mnist: wrote {train.size} train / {test.size} test digits to {out}")


def center_by_mass(glyph):
    """MNIST-style normalization: fit into 20x20, center of mass at 14,14."""
    from PIL import Image

    ys, xs = np.nonzero(glyph > 0)
    if ys.size == 0:
        return np.zeros((28, 28), np.uint8)
    crop = glyph[ys.min():ys.max() + 1, xs.min():xs.max() + 1]
    h, w = crop.shape
    s = 20.0 / max(h, w)
    nh, nw = max(1, int(round(h * s))), max(1, int(round(w * s)))
    crop = np.asarray(Image.fromarray(crop).resize((nw, nh), Image.LANCZOS), dtype=np.float64)
    crop = np.clip(crop, 0, 255)
    canvas = np.zeros((28, 28))
    total = crop.sum()
    cy = (crop.sum(axis=1) * np.arange(nh)).sum() / total
    cx = (crop.sum(axis=0) * np.arange(nw)).sum() / total
    oy = int(round(14 - cy))
    ox = int(round(14 - cx))
    oy = min(max(oy, 0), 28 - nh)
    ox = min(max(ox, 0), 28 - nw)
    canvas[oy:oy + nh, ox:ox + nw] = crop
    return canvas.round().astype(np.uint8)


def prepare_letters(data_dir, rng, count):
    from PIL import Image, ImageDraw, ImageFilter, ImageFont

    out = os.path.join(data_dir, "letters-synth")
    if os.path.exists(os.path.join(out, "train-images-idx3-ubyte")):
        print(f"letters-synth: found existing IDX files in {out}")
        return
    fonts = sorted(glob.glob("/usr/share/fonts/truetype/**/*.ttf", recursive=True))
    try:
        import matplotlib

        mpl = os.path.join(os.path.dirname(matplotlib.__file__), "mpl-data", "fonts", "ttf")
        fonts += sorted(glob.glob(os.path.join(mpl, "DejaVu*.ttf")))
        fonts += sorted(glob.glob(os.path.join(mpl, "cm[rs]*10.ttf")))
        fonts += [f for f in sorted(glob.glob(os.path.join(mpl, "STIXGeneral*.ttf")))]
    except ImportError:
        pass
    fonts = [f for f in fonts if "Display" not in f and "pdf.ttf" not in f]
    if not fonts:
        sys.exit("letters-synth: no TrueType fonts found")

    images = np.zeros((count, 28, 28), np.uint8)
    labels = np.zeros(count, np.uint8)
    for i in range(count):
        cls = i % 26
        ch = chr(ord("A") + cls) if rng.random() < 0.5 else chr(ord("a") + cls)
        font = ImageFont.truetype(fonts[rng.integers(len(fonts))], 64)
        img = Image.new("L", (128, 128), 0)
        ImageDraw.Draw(img).text((32, 16), ch, fill=255, font=font)
        stroke = rng.integers(0, 3)
        if stroke:
            img = img.filter(ImageFilter.MaxFilter(2 * stroke + 1))
        angle = rng.uniform(-15, 15)
        shear = rng.uniform(-0.3, 0.3)
        sx, sy = rng.uniform(0.8, 1.2, size=2)
        a = np.deg2rad(angle)
        m = np.array([[np.cos(a) * sx, -np.sin(a) + shear, 0], [np.sin(a), np.cos(a) * sy, 0]])
        m[:, 2] = np.array([64, 64]) - m[:, :2] @ np.array([64, 64])
        img = img.transform((128, 128), Image.AFFINE, m.flatten().tolist(), resample=Image.BILINEAR)
        img = img.filter(ImageFilter.GaussianBlur(rng.uniform(0.5, 1.5)))
        images[i] = center_by_mass(np.asarray(img))
        labels[i] = cls + 1
    perm = rng.permutation(count)
    images, labels = images[perm], labels[perm]
    split = count * 5 // 6
    write_split(out, "train", images[:split], labels[:split])
    write_split(out, "t10k", images[split:], labels[split:])
    print(f"letters-synth: wrote {split} train / {count - split} test glyphs to {out}")


NATURAL_SOURCES = [
    "astronaut", "camera", "coffee", "chelsea", "rocket",
    "coins", "moon", "brick", "grass", "gravel",
]


def prepare_natural(data_dir, rng, per_class):
    import skimage.data
    from skimage.color import rgb2gray
    from skimage.transform import resize

    out = os.path.join(data_dir, "natural-patches")
    if os.path.exists(os.path.join(out, "train-images-idx3-ubyte")):
        print(f"natural-patches: found existing IDX files in {out}")
        return
    images, labels = [], []
    for cls, name in enumerate(NATURAL_SOURCES):
        photo = np.asarray(getattr(skimage.data, name)())
        if photo.ndim == 3:
            photo = rgb2gray(photo[..., :3])
        photo = photo.astype(np.float64)
        if photo.max() > 1.5:
            photo = photo / 255.0
        h, w = photo.shape
        for _ in range(per_class):
            size = int(rng.integers(28, min(h, w) // 3))
            y = int(rng.integers(0, h - size + 1))
            x = int(rng.integers(0, w - size + 1))
            patch = resize(photo[y:y + size, x:x + size], (28, 28), anti_aliasing=True)
            if rng.random() < 0.5:
                patch = patch[:, ::-1]
            images.append(np.clip(patch * 255.0, 0, 255).round().astype(np.uint8))
            labels.append(cls)
    images = np.stack(images)
    labels = np.array(labels, np.uint8)
    perm = rng.permutation(labels.size)
    images, labels = images[perm], labels[perm]
    split = labels.size * 5 // 6
    write_split(out, "train", images[:split], labels[:split])
    write_split(out, "t10k", images[split:], labels[split:])
    print(f"natural-patches: wrote {split} train / {labels.size - split} test patches to {out}")


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--data-dir", default=os.environ.get("EIL_DATA_DIR", "data"))
    parser.add_argument("--seed", type=int, default=1234)
    parser.add_argument("--letters", type=int, default=7800, help="number of letter glyphs")
    parser.add_argument("--patches-per-class", type=int, default=600)
    args = parser.parse_args()

    os.makedirs(args.data_dir, exist_ok=True)
    prepare_mnist(args.data_dir, np.random.default_rng(args.seed))
    prepare_letters(args.data_dir, np.random.default_rng(args.seed + 1), args.letters)
    prepare_natural(args.data_dir, np.random.default_rng(args.seed + 2), args.patches_per_class)


if __name__ == "__main__":
    main()
