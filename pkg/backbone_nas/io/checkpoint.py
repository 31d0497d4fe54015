"""
Reader and writer of the ``dnas`` supernet checkpoint format.

Layout, all little-endian::

    magic       4 bytes   b'DNAS'
    version     uint32    1
    phase       uint8     0 initialized, 1 pretrained, 2 finetuned
    step        uint64
    seed        uint64
    count       uint32    number of tensors
    count times:
        name_length uint16
        name        UTF-8 bytes
        rank        uint8
        dims        rank x uint32
        data        float32, row-major
"""

import os
import struct

import numpy as np

from astropy.io import registry as io_registry

from ..supernet import SupernetWeights
from ..utils import CheckpointFormatError

__all__ = ['read_dnas', 'write_dnas', 'is_dnas', 'MAGIC', 'VERSION']

MAGIC = b'DNAS'
VERSION = 1

PHASE_CODES = {'initialized': 0, 'pretrained': 1, 'finetuned': 2}
PHASE_NAMES = {code: name for name, code in PHASE_CODES.items()}

_HEADER = struct.Struct('<4sIBQQI')


def is_dnas(origin, filepath, fileobj, *args, **kwargs):
    """
    Determine whether ``origin`` is a supernet checkpoint.
    """
    if fileobj is not None:
        pos = fileobj.tell()
        sig = fileobj.read(4)
        fileobj.seek(pos)
        return sig == MAGIC
    elif filepath is not None:
        return filepath.lower().endswith('.dnas')
    return False


class _Reader:

    def __init__(self, buffer, filename):
        self.buffer = buffer
        self.offset = 0
        self.filename = filename

    def unpack(self, fmt):
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.buffer):
            raise CheckpointFormatError("Checkpoint {0} is truncated at byte {1}"
                                        .format(self.filename, self.offset))
        values = struct.unpack_from(fmt, self.buffer, self.offset)
        self.offset += size
        return values

    def array(self, dims):
        count = int(np.prod(dims, dtype=np.int64))
        if self.offset + 4 * count > len(self.buffer):
            raise CheckpointFormatError("Checkpoint {0} is truncated at byte {1}"
                                        .format(self.filename, self.offset))
        data = np.frombuffer(self.buffer, dtype='<f4', count=count, offset=self.offset)
        self.offset += 4 * count
        return data.reshape(dims).astype(np.float32)


def read_dnas(filename, space=None):
    """
    Read a supernet checkpoint.

    Parameters
    ----------
    filename : str, path-like or file object
        An open binary file is read from its current position.
    space : `~backbone_nas.search_space.SearchSpaceSpec`
        The search space the supernet was built for; tensor names and
        shapes are checked against it.

    Raises
    ------
    CheckpointFormatError
        On a wrong magic, an unknown version or phase, truncation, trailing
        bytes, or tensors that do not fit ``space``.
    """
    if space is None:
        raise ValueError("Reading a dnas checkpoint needs the search space "
                         "(space=...)")

    if hasattr(filename, 'read'):
        buffer = filename.read()
        filename = getattr(filename, 'name', '<file object>')
    else:
        with open(filename, 'rb') as fh:
            buffer = fh.read()

    reader = _Reader(buffer, filename)
    magic, version, phase, step, seed, count = reader.unpack(_HEADER.format)
    if magic != MAGIC:
        raise CheckpointFormatError("{0} is not a supernet checkpoint (magic {1!r})"
                                    .format(filename, magic))
    if version != VERSION:
        raise CheckpointFormatError("Unsupported checkpoint version {0} in {1}"
                                    .format(version, filename))
    if phase not in PHASE_NAMES:
        raise CheckpointFormatError("Unknown phase tag {0} in {1}"
                                    .format(phase, filename))

    tensors = {}
    for _ in range(count):
        length, = reader.unpack('<H')
        if reader.offset + length > len(buffer):
            raise CheckpointFormatError("Checkpoint {0} is truncated at byte {1}"
                                        .format(filename, reader.offset))
        name = bytes(reader.buffer[reader.offset:reader.offset + length]).decode('utf-8')
        reader.offset += length
        rank, = reader.unpack('<B')
        dims = reader.unpack('<{0}I'.format(rank))
        if name in tensors:
            raise CheckpointFormatError("Duplicate tensor {0} in {1}".format(name, filename))
        tensors[name] = reader.array(dims)

    if reader.offset != len(buffer):
        raise CheckpointFormatError("{0} trailing bytes after the last tensor in {1}"
                                    .format(len(buffer) - reader.offset, filename))

    head = tensors.get('head.classification.fc.weight')
    if head is None:
        raise CheckpointFormatError("{0} lacks the classification head".format(filename))

    weights = SupernetWeights(space, num_classes=head.shape[0],
                              phase=PHASE_NAMES[phase], step=step, seed=seed)
    try:
        weights.load_tensors(tensors)
    except ValueError as ex:
        raise CheckpointFormatError("Checkpoint {0} does not match search space {1}: "
                                    "{2}".format(filename, space.name, ex))
    return weights


def write_dnas(weights, filename, overwrite=False):
    """
    Write a supernet checkpoint. Writing the same weights twice produces
    identical bytes.
    """
    if os.path.exists(filename) and not overwrite:
        raise OSError("File {0} already exists; use overwrite=True".format(filename))

    tensors = list(weights.named_tensors())
    with open(filename, 'wb') as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, PHASE_CODES[weights.phase],
                              weights.step, weights.seed, len(tensors)))
        for name, array in tensors:
            encoded = name.encode('utf-8')
            fh.write(struct.pack('<H', len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack('<B{0}I'.format(array.ndim), array.ndim, *array.shape))
            fh.write(np.ascontiguousarray(array, dtype='<f4').tobytes())


io_registry.register_reader('dnas', SupernetWeights, read_dnas)
io_registry.register_writer('dnas', SupernetWeights, write_dnas)
io_registry.register_identifier('dnas', SupernetWeights, is_dnas)
