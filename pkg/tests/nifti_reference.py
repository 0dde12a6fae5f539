"""Reference NIfTI-1 writer for fixtures, independent of parkvol.io: the
header is packed field by field straight from the format description."""

import struct

import numpy as np


def reference_nifti_bytes(data, spacing, datatype, magic=b"n+1\x00", intent_name=b""):
    hdr = bytearray(348)
    struct.pack_into("<i", hdr, 0, 348)                                   # sizeof_hdr
    struct.pack_into("<8h", hdr, 40, 3, *data.shape, 1, 1, 1, 1)          # dim
    struct.pack_into("<h", hdr, 70, datatype)                             # datatype
    struct.pack_into("<h", hdr, 72, {2: 8, 4: 16, 16: 32}[datatype])      # bitpix
    struct.pack_into("<8f", hdr, 76, 1.0, *spacing, 1.0, 1.0, 1.0, 1.0)   # pixdim
    struct.pack_into("<f", hdr, 108, 352.0)                               # vox_offset
    struct.pack_into("<16s", hdr, 328, intent_name)
    struct.pack_into("<4s", hdr, 344, magic)
    return bytes(hdr) + b"\x00" * 4 + np.asarray(data).tobytes(order="F")
