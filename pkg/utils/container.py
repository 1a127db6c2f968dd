"""
The "DMLT" array container used for latents, traces and adapter tensors.

Layout: 4 magic bytes "DMLT", u32 number of dimensions, one u32 per
dimension, then the row-major little-endian f32 payload. All integers are
little-endian.
"""
import struct

import numpy as np

from errors import DimensionMismatchError

MAGIC = b"DMLT"


def dumps(array):
    array = np.asarray(array)
    header = MAGIC + struct.pack("<I", array.ndim)
    header += struct.pack("<{}I".format(array.ndim), *array.shape)
    return header + np.ascontiguousarray(array, dtype="<f4").tobytes()


def loads(data):
    if data[:4] != MAGIC:
        raise DimensionMismatchError("Not a DMLT container")
    (ndim,) = struct.unpack_from("<I", data, 4)
    shape = struct.unpack_from("<{}I".format(ndim), data, 8)
    offset = 8 + 4 * ndim
    expected = int(np.prod(shape, dtype=np.int64)) * 4
    if len(data) - offset != expected:
        raise DimensionMismatchError(
            "DMLT payload has {} bytes, header declares {}".format(
                len(data) - offset, expected
            )
        )
    return np.frombuffer(data, dtype="<f4", offset=offset).reshape(shape).copy()


def write_array(path, array):
    with open(path, "wb") as f:
        f.write(dumps(array))


def read_array(path):
    with open(path, "rb") as f:
        return loads(f.read())
