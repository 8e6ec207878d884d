"""Shared test helpers: tolerance assertion and fixture-image trees."""

import numpy as np
from PIL import Image

from driverwatch.data import CLASS_TABLE


def assert_close_rel(actual, expected, tol):
    """Elementwise |a - e| <= tol * max(1, |e|)."""
    actual = np.asarray(actual, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    assert actual.shape == expected.shape
    bound = tol * np.maximum(1.0, np.abs(expected))
    worst = np.abs(actual - expected) - bound
    assert worst.max() <= 0, f"max violation {worst.max():.3e} (tol {tol})"


def make_image_tree(root, per_class, size=(64, 48), seed=0, subjects=None,
                    fmt="jpeg"):
    """Write a c0..c9 tree of images; optionally a driver-list CSV.

    Each class gets a distinct base color with per-image noise on top, so
    class identity survives even global average pooling.
    subjects: list of subject ids to cycle samples through (CSV written when given).
    """
    rng = np.random.default_rng(seed)
    csv_rows = []
    idx = 0
    for cls in CLASS_TABLE:
        d = root / cls.code
        d.mkdir(parents=True, exist_ok=True)
        c = cls.class_id
        base = np.array([(37 * c + 20) % 216, (83 * c + 60) % 216, (151 * c + 100) % 216])
        for i in range(per_class):
            noise = rng.integers(-20, 21, size=(size[1], size[0], 3))
            arr = np.clip(base[None, None, :] + noise, 0, 255).astype(np.uint8)
            name = f"img_{idx:05d}.jpg" if fmt == "jpeg" else f"img_{idx:05d}.png"
            Image.fromarray(arr, "RGB").save(d / name, format=fmt.upper())
            if subjects is not None:
                csv_rows.append(f"{subjects[idx % len(subjects)]},{cls.code},{name}")
            idx += 1
    if subjects is not None:
        header = "subject,classname,img\n"
        (root / "driver_imgs_list.csv").write_text(header + "\n".join(csv_rows) + "\n")
    return root
