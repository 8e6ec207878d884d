"""Checkpoint conversion: upstream state dict -> DWT weight file.

The checkpoint must be a state-dict-style .pt file (a flat name->tensor map,
optionally wrapped under a "model" or "state_dict" key). Checkpoints that
pickle whole model objects need their framework installed to load and are
not supported. The head's linear layer is reinitialized (seeded small
uniform) whenever the checkpoint's class count differs from the requested
one; everything else is copied bit-exactly at f32.
"""

from __future__ import annotations

import logging
import math
from pathlib import Path

import numpy as np
import torch

from . import arch, namemap, writer

log = logging.getLogger(__name__)


class ExportError(Exception):
    pass


def load_state_dict(ckpt_path: str | Path) -> dict[str, torch.Tensor]:
    try:
        obj = torch.load(ckpt_path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise ExportError(f"checkpoint not found: {ckpt_path}")
    except Exception as e:
        raise ExportError(
            f"cannot load {ckpt_path} as a state dict ({e}); "
            "checkpoints that pickle whole model objects are not supported"
        ) from e
    for key in ("model", "state_dict"):
        if isinstance(obj, dict) and key in obj and isinstance(obj[key], dict):
            obj = obj[key]
    if not isinstance(obj, dict) or not all(torch.is_tensor(v) for v in obj.values()):
        raise ExportError(f"{ckpt_path} does not contain a flat name->tensor map")
    return obj


def _head_init(nc: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    bound = 1.0 / math.sqrt(arch.FEATURE_DIM)
    weight = rng.uniform(-bound, bound, size=(nc, arch.FEATURE_DIM)).astype(np.float32)
    bias = rng.uniform(-bound, bound, size=nc).astype(np.float32)
    return weight, bias


def convert(state: dict[str, torch.Tensor], nc: int, seed: int = 0
            ) -> tuple[dict[str, np.ndarray], dict]:
    """Apply the name map and shape checks; returns (tensors, metadata)."""
    pairs = namemap.load()
    expected = arch.expected_shapes(nc)
    linear_names = {"head.linear.weight", "head.linear.bias"}

    missing = [u for u, d in pairs if u not in state and d not in linear_names]
    ckpt_nc = None
    linear_key = f"{arch.UPSTREAM_LINEAR_PREFIX}.weight"
    if linear_key in state:
        ckpt_nc = int(state[linear_key].shape[0])
    elif f"{arch.UPSTREAM_LINEAR_PREFIX}.bias" in state:
        ckpt_nc = int(state[f"{arch.UPSTREAM_LINEAR_PREFIX}.bias"].shape[0])
    else:
        missing.append(linear_key)
    if ckpt_nc == nc:
        # keeping the checkpoint head requires both of its tensors
        missing.extend(
            u for u in (linear_key, f"{arch.UPSTREAM_LINEAR_PREFIX}.bias")
            if u not in state
        )
    if missing:
        mapped = {u for u, _ in pairs}
        unmatched_ckpt = sorted(
            k for k in state
            if k not in mapped and not k.endswith(arch.IGNORED_LEAVES)
        )
        raise ExportError(
            f"checkpoint is missing expected tensors: {sorted(missing)}; "
            f"unmatched checkpoint tensors: {unmatched_ckpt or 'none'}"
        )

    reinit_head = ckpt_nc != nc
    tensors: dict[str, np.ndarray] = {}
    mismatches = []
    for upstream, target in pairs:
        if target in linear_names and reinit_head:
            continue
        values = state[upstream].detach().cpu().numpy().astype(np.float32)
        want = expected[target]
        if values.shape != want:
            mismatches.append(f"{upstream}: checkpoint {values.shape} vs graph {want}")
            continue
        tensors[target] = values
    if mismatches:
        raise ExportError("tensor shape mismatch: " + "; ".join(sorted(mismatches)))

    if reinit_head:
        log.info("checkpoint head has %s classes, requested %d: reinitializing head",
                 ckpt_nc, nc)
        weight, bias = _head_init(nc, seed)
        tensors["head.linear.weight"] = weight
        tensors["head.linear.bias"] = bias

    extras = sorted(
        k for k in state
        if k not in {u for u, _ in pairs} and not k.endswith(arch.IGNORED_LEAVES)
    )
    for k in extras:
        log.warning("ignoring unmatched checkpoint tensor %s", k)

    metadata = {
        "arch": arch.ARCH_NAME,
        "nc": nc,
        "bn_eps": arch.BN_EPS,
        "normalization": "div255",
    }
    return tensors, metadata


def count_parameters(tensors: dict[str, np.ndarray]) -> int:
    """Trainable parameters only: batch-norm running statistics do not count."""
    return sum(
        t.size for name, t in tensors.items()
        if not name.endswith((".running_mean", ".running_var"))
    )


def manifest_lines(tensors: dict[str, np.ndarray], dtype: str) -> list[str]:
    lines = [
        f"{name}  {'x'.join(map(str, tensors[name].shape))}  {dtype}"
        for name in sorted(tensors)
    ]
    lines.append(f"total parameters: {count_parameters(tensors)}")
    return lines


def export(ckpt_path: str | Path, nc: int, out_path: str | Path,
           seed: int = 0, dtype: str = "f32") -> list[str]:
    """Convert and write; returns the manifest that was printed."""
    state = load_state_dict(ckpt_path)
    tensors, metadata = convert(state, nc, seed=seed)
    data = writer.dwt_bytes(tensors, metadata, dtype=dtype)
    Path(out_path).write_bytes(data)
    return manifest_lines(tensors, dtype)
