"""Writer for the FeatureFile (``.vtaf``) wire format.

Little-endian: magic ``VTAF``, version u16=1, rows u32, cols u32, frame
rate f32, then rows x cols float32 row-major. Deliberately reimplemented
here so this package has no dependency on the consumer.
"""

import struct
from pathlib import Path

import numpy as np

MAGIC = b"VTAF"
VERSION = 1
HEADER = struct.Struct("<4sHIIf")


def write_feature_file(path, matrix: np.ndarray, frame_rate_hz: float) -> None:
    m = np.ascontiguousarray(matrix, dtype=np.float32)
    if m.ndim != 2:
        raise ValueError(f"feature matrix must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("feature matrix contains non-finite values")
    header = HEADER.pack(MAGIC, VERSION, m.shape[0], m.shape[1],
                         float(frame_rate_hz))
    Path(path).write_bytes(header + m.tobytes())
