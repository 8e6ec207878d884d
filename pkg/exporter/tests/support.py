"""Shared exporter-test helpers: synthetic checkpoints and a DWT parser."""

import json
import struct
import zlib

import numpy as np
import torch

from dwtexport import arch


def synthetic_state_dict(nc=1000, seed=0):
    """A checkpoint with the upstream naming scheme and correct shapes."""
    gen = torch.Generator().manual_seed(seed)
    state = {}
    for prefix, c_in, c_out, k in arch.CONV_BLOCKS:
        state[f"{prefix}.conv.weight"] = torch.randn(c_out, c_in, k, k, generator=gen)
        state[f"{prefix}.bn.weight"] = torch.randn(c_out, generator=gen)
        state[f"{prefix}.bn.bias"] = torch.randn(c_out, generator=gen)
        state[f"{prefix}.bn.running_mean"] = torch.randn(c_out, generator=gen)
        state[f"{prefix}.bn.running_var"] = torch.rand(c_out, generator=gen) + 0.1
        state[f"{prefix}.bn.num_batches_tracked"] = torch.tensor(121, dtype=torch.long)
    state[f"{arch.UPSTREAM_LINEAR_PREFIX}.weight"] = torch.randn(
        nc, arch.FEATURE_DIM, generator=gen
    )
    state[f"{arch.UPSTREAM_LINEAR_PREFIX}.bias"] = torch.randn(nc, generator=gen)
    return state


def read_dwt(path):
    """Independent struct-based parse of a DWT file: (metadata, {name: array})."""
    data = open(path, "rb").read()
    assert data[:4] == b"DWT1"
    assert struct.unpack("<H", data[4:6])[0] == 1
    assert struct.unpack("<I", data[-4:])[0] == zlib.crc32(data[:-4]) & 0xFFFFFFFF
    pos = 6
    (meta_len,) = struct.unpack_from("<I", data, pos)
    pos += 4
    metadata = json.loads(data[pos : pos + meta_len].decode("utf-8"))
    pos += meta_len
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos : pos + name_len].decode("utf-8")
        pos += name_len
        dtype_code, ndim = struct.unpack_from("<BB", data, pos)
        pos += 2
        dims = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        n = int(np.prod(dims)) if dims else 1
        elem = 4 if dtype_code == 0 else 2
        raw = np.frombuffer(data[pos : pos + n * elem],
                            dtype="<f4" if dtype_code == 0 else "<f2")
        pos += n * elem
        tensors[name] = raw.astype(np.float32).reshape(dims)
    assert pos == len(data) - 4
    return metadata, tensors
