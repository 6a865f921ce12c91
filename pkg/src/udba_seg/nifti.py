"""Minimal single-file NIfTI-1 volume reader/writer.

Covers what the pipeline needs: 3D scalar volumes in .nii or .nii.gz with
voxel spacing, both endiannesses, common integer/float dtypes, and the
scl_slope/scl_inter intensity rescale. Volumes are exchanged as numpy
arrays in [slice, row, col] order, i.e. axial slice index first; on disk
NIfTI stores [X, Y, Z] Fortran-ordered, so slice order is the Z axis.
"""

import gzip
import struct
from pathlib import Path

import numpy as np

HEADER_SIZE = 348
MAGIC_SINGLE = b"n+1\x00"

# NIfTI-1 datatype codes
_DTYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
    256: np.int8,
    512: np.uint16,
    768: np.uint32,
}
_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


class NiftiError(IOError):
    """Unreadable or unsupported NIfTI file."""


def _open_maybe_gzip(path, mode):
    path = Path(path)
    with open(path, "rb" if "r" in mode else mode) as raw:
        if "r" in mode:
            head = raw.read(2)
            raw.seek(0)
            if head == b"\x1f\x8b":
                return gzip.open(path, mode)
            return open(path, mode)
    raise AssertionError("unreachable")


def read_volume(path):
    """Read a 3D volume.

    Returns (voxels, spacing): voxels as [Z, Y, X] numpy array, spacing
    as (sz, sy, sx) in mm. Raises NiftiError on missing files, corrupt
    headers, or non-3D data.
    """
    path = Path(path)
    if not path.exists():
        raise NiftiError(f"no such volume file: {path}")
    opener = gzip.open if _is_gzipped(path) else open
    with opener(path, "rb") as fh:
        header = fh.read(HEADER_SIZE)
        if len(header) < HEADER_SIZE:
            raise NiftiError(f"truncated header in {path}")
        sizeof_hdr = struct.unpack_from("<i", header, 0)[0]
        if sizeof_hdr == 348:
            bo = "<"
        elif struct.unpack_from(">i", header, 0)[0] == 348:
            bo = ">"
        else:
            raise NiftiError(f"corrupt header (sizeof_hdr != 348) in {path}")
        magic = header[344:348]
        if magic != MAGIC_SINGLE:
            raise NiftiError(f"not a single-file NIfTI-1 volume: {path}")

        dim = struct.unpack_from(bo + "8h", header, 40)
        ndim = dim[0]
        shape = [int(d) for d in dim[1 : 1 + max(ndim, 0)]]
        # trailing singleton dims (e.g. a [X,Y,Z,1] export) are harmless
        while len(shape) > 3 and shape[-1] == 1:
            shape.pop()
        if len(shape) != 3:
            raise NiftiError(
                f"expected a 3D volume, got dim[0]={ndim} shape {shape} in {path}"
            )
        nx, ny, nz = shape

        datatype = struct.unpack_from(bo + "h", header, 70)[0]
        if datatype not in _DTYPES:
            raise NiftiError(f"unsupported datatype code {datatype} in {path}")
        dtype = np.dtype(_DTYPES[datatype]).newbyteorder(bo)

        pixdim = struct.unpack_from(bo + "8f", header, 76)
        spacing = (abs(pixdim[3]), abs(pixdim[2]), abs(pixdim[1]))
        if not all(s > 0 for s in spacing):
            raise NiftiError(f"non-positive voxel spacing {spacing} in {path}")

        vox_offset = int(struct.unpack_from(bo + "f", header, 108)[0])
        scl_slope = struct.unpack_from(bo + "f", header, 112)[0]
        scl_inter = struct.unpack_from(bo + "f", header, 116)[0]

        fh.seek(vox_offset)
        count = nx * ny * nz
        buf = fh.read(count * dtype.itemsize)
        if len(buf) < count * dtype.itemsize:
            raise NiftiError(f"truncated voxel data in {path}")
        data = np.frombuffer(buf, dtype=dtype, count=count)
        # disk order is Fortran [X,Y,Z]; flip to [Z,Y,X]
        voxels = data.reshape((nx, ny, nz), order="F").transpose(2, 1, 0)
        voxels = np.ascontiguousarray(voxels.astype(dtype.newbyteorder("=")))
        if scl_slope not in (0.0, 1.0) or scl_inter != 0.0:
            slope = scl_slope if scl_slope != 0.0 else 1.0
            voxels = voxels.astype(np.float32) * slope + scl_inter
    return voxels, spacing


def write_volume(path, voxels, spacing, dtype=None):
    """Write a 3D volume as single-file NIfTI-1 (.nii or .nii.gz).

    voxels: [Z, Y, X]; spacing: (sz, sy, sx) mm.
    """
    voxels = np.asarray(voxels)
    if voxels.ndim != 3:
        raise NiftiError(f"can only write 3D volumes, got shape {voxels.shape}")
    if dtype is not None:
        voxels = voxels.astype(dtype)
    code = _CODES.get(voxels.dtype)
    if code is None:
        raise NiftiError(f"unsupported array dtype {voxels.dtype}")
    sz, sy, sx = (float(s) for s in spacing)
    nz, ny, nx = voxels.shape

    header = bytearray(HEADER_SIZE)
    struct.pack_into("<i", header, 0, 348)
    struct.pack_into("<8h", header, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<h", header, 70, code)
    struct.pack_into("<h", header, 72, voxels.dtype.itemsize * 8)
    struct.pack_into("<8f", header, 76, 1.0, sx, sy, sz, 0, 0, 0, 0)
    struct.pack_into("<f", header, 108, float(HEADER_SIZE + 4))
    struct.pack_into("<f", header, 112, 1.0)  # scl_slope
    struct.pack_into("<f", header, 116, 0.0)  # scl_inter
    struct.pack_into("<b", header, 123, 2)  # xyzt_units: mm
    struct.pack_into("<h", header, 254, 1)  # sform_code: scanner
    struct.pack_into("<4f", header, 280, sx, 0, 0, 0)
    struct.pack_into("<4f", header, 296, 0, sy, 0, 0)
    struct.pack_into("<4f", header, 312, 0, 0, sz, 0)
    header[344:348] = MAGIC_SINGLE

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    opener = gzip.open if path.suffix == ".gz" else open
    # C-ravel of [Z,Y,X] has X fastest, matching Fortran [X,Y,Z] disk order
    payload = voxels.astype(voxels.dtype.newbyteorder("<")).tobytes(order="C")
    with opener(path, "wb") as fh:
        fh.write(bytes(header))
        fh.write(b"\x00" * 4)  # extension flag
        fh.write(payload)
    return path


def _is_gzipped(path):
    with open(path, "rb") as fh:
        return fh.read(2) == b"\x1f\x8b"
