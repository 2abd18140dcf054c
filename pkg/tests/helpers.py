"""Shared test oracles and builders, independent of the package internals."""

import numpy as np


def oracle_rises(values):
    """Pure-Python reference for peak rises: compress runs of equal values,
    then for each strict interior maximum walk back to the latest interior
    minimum (or the first sample) and record the difference."""
    values = list(values)
    if not values:
        return []
    v = [values[0]]
    for x in values[1:]:
        if x != v[-1]:
            v.append(x)
    if len(v) < 3:
        return []
    rises = []
    for i in range(1, len(v) - 1):
        if v[i] > v[i - 1] and v[i] > v[i + 1]:
            prev_min = v[0]
            for j in range(i - 1, 0, -1):
                if v[j] < v[j - 1] and v[j] < v[j + 1]:
                    prev_min = v[j]
                    break
            rises.append(v[i] - prev_min)
    return rises


def oracle_count(values, theta):
    """Reference peak count at threshold theta."""
    return sum(1 for r in oracle_rises(values) if r >= theta)


def rise_sequence(rises, base=0.0):
    """Envelope-like sequence with one peak per requested rise, each
    returning to the base level, so every peak's rise is exactly as given."""
    out = [base]
    for r in rises:
        out.append(base + r)
        out.append(base)
    return np.asarray(out, dtype=np.float64)


def png_pixel_chunks(blob: bytes) -> bytes:
    """Concatenated critical PNG chunks (IHDR/PLTE/IDAT/IEND), dropping
    ancillary metadata such as text and timestamps."""
    assert blob[:8] == b"\x89PNG\r\n\x1a\n", "not a PNG file"
    out = [blob[:8]]
    pos = 8
    while pos < len(blob):
        length = int.from_bytes(blob[pos : pos + 4], "big")
        kind = blob[pos + 4 : pos + 8]
        end = pos + 12 + length
        if kind in (b"IHDR", b"PLTE", b"IDAT", b"IEND"):
            out.append(blob[pos:end])
        pos = end
    return b"".join(out)
