"""Single-thread wall-clock comparison of the direct and batch-fold TBC paths."""

import csv
import io
import statistics
import time

from .errors import ShapeError
from .nn import ConvSpec, conv2d
from .tensor import Rng
from .tied import TiedConvWeights, tbc_forward_direct, tbc_forward_fast

PATHS = ("direct", "fast", "conv")
COLUMNS = ("op", "path", "B", "c", "hw", "reps", "median_ms")


def _path_fn(path, spec):
    if path == "direct":
        return lambda x, w: tbc_forward_direct(x, spec, w)
    if path == "fast":
        return lambda x, w: tbc_forward_fast(x, spec, w)
    # untied reference with the same channel count
    full = spec.with_(blocks=1)
    return lambda x, w: conv2d(x, full, w)


def bench_tbc(paths, c, b_list, hw, reps=5, batch=1, k=3, seed=0):
    """One row per (B, path): median wall time of ``reps`` runs after one warm-up."""
    for path in paths:
        if path not in PATHS:
            raise ShapeError(f"unknown path {path!r}; choose from {', '.join(PATHS)}")
    if reps < 1 or hw < 1:
        raise ShapeError("reps and hw must be >= 1")
    rows = []
    rng = Rng(seed)
    x = rng.uniform((batch, c, hw, hw))
    full_w = None
    for b in b_list:
        spec = ConvSpec(c, c, k, 1, k // 2, blocks=b)
        for path in paths:
            if path == "conv":
                full_w = full_w if full_w is not None else _weights(rng, spec.with_(blocks=1))
                w = full_w
            else:
                w = _weights(rng, spec)
            fn = _path_fn(path, spec)
            fn(x, w)
            times = []
            for _ in range(reps):
                start = time.perf_counter()
                fn(x, w)
                times.append((time.perf_counter() - start) * 1000.0)
            rows.append({"op": "tbc", "path": path, "B": b, "c": c, "hw": hw, "reps": reps,
                         "median_ms": statistics.median(times)})
    return rows


def _weights(rng, spec):
    return TiedConvWeights(rng.uniform(spec.bank_shape))


def rows_to_csv(rows):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({**row, "median_ms": f"{row['median_ms']:.4f}"})
    return buf.getvalue()


def fast_direct_ratios(rows):
    """{B: fast_ms / direct_ms} for every B that has both paths."""
    by_b = {}
    for row in rows:
        by_b.setdefault(row["B"], {})[row["path"]] = row["median_ms"]
    return {b: t["fast"] / t["direct"] for b, t in by_b.items() if "fast" in t and "direct" in t}
