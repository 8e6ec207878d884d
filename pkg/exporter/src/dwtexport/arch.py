"""Embedded layer geometry for the supported architecture.

The exporter converts exactly one architecture (the n-width classifier), so
its 26 conv blocks are written out here verbatim: (upstream prefix, c_in,
c_out, kernel). Expected tensor shapes for any class count derive from this
table; nothing is inferred from the checkpoint being converted.
"""

from __future__ import annotations

ARCH_NAME = "yolov8n-cls"
FEATURE_DIM = 1280
BN_EPS = 1e-3

# (upstream prefix, c_in, c_out, kernel)
CONV_BLOCKS: tuple[tuple[str, int, int, int], ...] = (
    ("model.0", 3, 16, 3),
    ("model.1", 16, 32, 3),
    ("model.2.cv1", 32, 32, 1),
    ("model.2.m.0.cv1", 16, 16, 3),
    ("model.2.m.0.cv2", 16, 16, 3),
    ("model.2.cv2", 48, 32, 1),
    ("model.3", 32, 64, 3),
    ("model.4.cv1", 64, 64, 1),
    ("model.4.m.0.cv1", 32, 32, 3),
    ("model.4.m.0.cv2", 32, 32, 3),
    ("model.4.m.1.cv1", 32, 32, 3),
    ("model.4.m.1.cv2", 32, 32, 3),
    ("model.4.cv2", 128, 64, 1),
    ("model.5", 64, 128, 3),
    ("model.6.cv1", 128, 128, 1),
    ("model.6.m.0.cv1", 64, 64, 3),
    ("model.6.m.0.cv2", 64, 64, 3),
    ("model.6.m.1.cv1", 64, 64, 3),
    ("model.6.m.1.cv2", 64, 64, 3),
    ("model.6.cv2", 256, 128, 1),
    ("model.7", 128, 256, 3),
    ("model.8.cv1", 256, 256, 1),
    ("model.8.m.0.cv1", 128, 128, 3),
    ("model.8.m.0.cv2", 128, 128, 3),
    ("model.8.cv2", 384, 256, 1),
    ("model.9.conv", 256, 1280, 1),
)

UPSTREAM_LINEAR_PREFIX = "model.9.linear"

# upstream batch-norm leaf -> container leaf
BN_LEAF_MAP = {
    "weight": "gamma",
    "bias": "beta",
    "running_mean": "running_mean",
    "running_var": "running_var",
}

# upstream leaves that carry no information the engine needs
IGNORED_LEAVES = ("num_batches_tracked",)


def dwt_prefix(upstream_prefix: str) -> str:
    """Map an upstream module path onto the container's naming scheme."""
    if upstream_prefix == "model.9.conv":
        return "head.conv"
    if upstream_prefix == UPSTREAM_LINEAR_PREFIX:
        return "head.linear"
    assert upstream_prefix.startswith("model.")
    return "backbone." + upstream_prefix[len("model."):]


def expected_shapes(nc: int) -> dict[str, tuple[int, ...]]:
    """DWT tensor name -> shape, for the given class count."""
    out: dict[str, tuple[int, ...]] = {}
    for prefix, c_in, c_out, k in CONV_BLOCKS:
        p = dwt_prefix(prefix)
        out[f"{p}.conv.weight"] = (c_out, c_in, k, k)
        for leaf in ("gamma", "beta", "running_mean", "running_var"):
            out[f"{p}.bn.{leaf}"] = (c_out,)
    out["head.linear.weight"] = (nc, FEATURE_DIM)
    out["head.linear.bias"] = (nc,)
    return out


def upstream_name_pairs() -> list[tuple[str, str]]:
    """(upstream name, DWT name) for every expected tensor, in table order."""
    pairs = []
    for prefix, *_ in CONV_BLOCKS:
        p = dwt_prefix(prefix)
        pairs.append((f"{prefix}.conv.weight", f"{p}.conv.weight"))
        for up_leaf, dwt_leaf in BN_LEAF_MAP.items():
            pairs.append((f"{prefix}.bn.{up_leaf}", f"{p}.bn.{dwt_leaf}"))
    pairs.append((f"{UPSTREAM_LINEAR_PREFIX}.weight", "head.linear.weight"))
    pairs.append((f"{UPSTREAM_LINEAR_PREFIX}.bias", "head.linear.bias"))
    return pairs
