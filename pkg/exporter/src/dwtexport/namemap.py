"""The checked-in upstream->DWT tensor name map.

One supported upstream release per map file. The file is authoritative for
reviewers and diffs; load() verifies it is a bijection and that it covers
exactly the tensor set the engine expects, so a stale or hand-edited map
fails fast instead of producing a weight file that cannot bind.
"""

from __future__ import annotations

from importlib import resources

from . import arch

DEFAULT_MAP_FILE = "namemap_yolov8n_cls.txt"


class NameMapError(ValueError):
    pass


def parse(text: str) -> list[tuple[str, str]]:
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 2:
            raise NameMapError(f"line {lineno}: expected two columns, got {raw!r}")
        pairs.append((fields[0], fields[1]))
    return pairs


def load(map_file: str = DEFAULT_MAP_FILE) -> list[tuple[str, str]]:
    text = resources.files(__package__).joinpath(map_file).read_text()
    pairs = parse(text)
    upstream = [u for u, _ in pairs]
    targets = [d for _, d in pairs]
    if len(set(upstream)) != len(upstream) or len(set(targets)) != len(targets):
        raise NameMapError(f"{map_file}: map is not a bijection")
    expected = set(arch.expected_shapes(nc=2))  # shapes ignored, names are nc-free
    if set(targets) != expected:
        missing = sorted(expected - set(targets))
        extra = sorted(set(targets) - expected)
        raise NameMapError(
            f"{map_file} does not cover the expected tensor set: "
            f"missing={missing or 'none'}, extra={extra or 'none'}"
        )
    return pairs
