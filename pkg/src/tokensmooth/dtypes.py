"""Widening and round-to-nearest-even narrowing for F32 / F16 / BF16 row buffers."""

from __future__ import annotations

import numpy as np

SCALABLE = ("F32", "F16", "BF16")

# safetensors dtype tags -> byte width; only SCALABLE ones are ever decoded
WIDTHS = {
    "BOOL": 1, "U8": 1, "I8": 1, "F8_E4M3": 1, "F8_E5M2": 1,
    "I16": 2, "U16": 2, "F16": 2, "BF16": 2,
    "I32": 4, "U32": 4, "F32": 4,
    "I64": 8, "U64": 8, "F64": 8,
}


def widen(buf, dtype: str) -> np.ndarray:
    """Decode little-endian storage bytes to float64. Exact for all three dtypes."""
    if dtype == "F32":
        return np.frombuffer(buf, dtype="<f4").astype(np.float64)
    if dtype == "F16":
        return np.frombuffer(buf, dtype="<f2").astype(np.float64)
    if dtype == "BF16":
        bits = np.frombuffer(buf, dtype="<u2").astype(np.uint32) << 16
        # signalling NaN payloads trip an "invalid" flag on the cast; they stay NaN
        with np.errstate(invalid="ignore"):
            return bits.view(np.float32).astype(np.float64)
    raise ValueError(f"dtype {dtype} cannot be widened")


def narrow(values, dtype: str) -> bytes:
    """Encode float64 values to storage bytes, rounding to nearest, ties to even."""
    x = np.asarray(values, dtype=np.float64)
    if dtype in ("F32", "F16"):
        # numpy converts double -> single/half directly (no intermediate rounding)
        with np.errstate(over="ignore"):
            return x.astype("<f4" if dtype == "F32" else "<f2").tobytes()
    if dtype == "BF16":
        return _to_bf16_bits(x).astype("<u2").tobytes()
    raise ValueError(f"dtype {dtype} cannot be narrowed")


def _to_bf16_bits(x: np.ndarray) -> np.ndarray:
    # float64 -> float32 with round-to-odd, then float32 -> bf16 with RNE. Round-to-odd at
    # 24 bits followed by RNE at 8 bits equals a single correct rounding (24 >= 8 + 2).
    with np.errstate(over="ignore", invalid="ignore"):
        f = x.astype(np.float32)
        overshoot = np.abs(f.astype(np.float64)) > np.abs(x)
        f = np.where(overshoot, np.nextafter(f, np.float32(0)), f)
        inexact = np.isfinite(x) & (f.astype(np.float64) != x)
    bits = f.view(np.uint32).copy()
    bits |= inexact.astype(np.uint32)
    nan = np.isnan(x)
    rounded = (bits + np.uint32(0x7FFF) + ((bits >> 16) & 1)) >> 16
    rounded = np.where(nan, (bits >> 16) | 0x0040, rounded)
    return rounded.astype(np.uint16)


def scale_row(buf, dtype: str, S: float) -> bytes:
    return narrow(widen(buf, dtype) * S, dtype)


def ulp(values, dtype: str) -> np.ndarray:
    """Spacing of the storage dtype at each value (used for error bounds)."""
    x = np.abs(np.asarray(values, dtype=np.float64))
    mant, min_exp = {"F32": (23, -126), "F16": (10, -14), "BF16": (7, -126)}[dtype]
    e = np.floor(np.log2(np.where(x > 0, x, 2.0 ** min_exp)))
    e = np.maximum(e, min_exp)
    return np.ldexp(1.0, (e - mant).astype(int))
