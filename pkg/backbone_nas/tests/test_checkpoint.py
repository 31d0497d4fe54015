import struct
from pathlib import Path

import numpy as np
import pytest

from ..io.checkpoint import MAGIC, VERSION
from ..search_space import SearchSpaceSpec
from ..supernet import SupernetWeights
from ..utils import CheckpointFormatError


def test_roundtrip(finetuned_weights, tiny_space, tmp_path):
    filename = str(tmp_path / 'supernet.dnas')
    finetuned_weights.write(filename, format='dnas')
    weights = SupernetWeights.read(filename, format='dnas', space=tiny_space)
    assert weights.checksums() == finetuned_weights.checksums()
    assert weights.phase == 'finetuned'
    assert weights.step == finetuned_weights.step
    assert weights.seed == finetuned_weights.seed
    assert weights.num_classes == 3


def test_header(tiny_space, tmp_path):
    weights = SupernetWeights.initialize(tiny_space, seed=9)
    weights.step = 17
    filename = tmp_path / 'supernet.dnas'
    weights.write(filename, format='dnas')
    header = filename.read_bytes()[:29]
    magic, version, phase, step, seed, count = struct.unpack('<4sIBQQI', header)
    assert magic == MAGIC == b'DNAS'
    assert version == VERSION == 1
    assert phase == 0
    assert (step, seed) == (17, 9)
    assert count == len(list(weights.named_tensors()))


def test_format_is_identified(pretrained_weights, tiny_space, tmp_path):
    filename = tmp_path / 'checkpoint.dnas'
    pretrained_weights.write(filename)
    weights = SupernetWeights.read(filename, space=tiny_space)
    assert weights.phase == 'pretrained'
    # identified from the magic bytes, whatever the extension
    renamed = tmp_path / 'checkpoint.bin'
    renamed.write_bytes(filename.read_bytes())
    assert SupernetWeights.read(str(renamed), space=tiny_space).checksums() == \
        pretrained_weights.checksums()


def test_read_from_file_object(pretrained_weights, tiny_space, tmp_path):
    filename = tmp_path / 'checkpoint.dnas'
    pretrained_weights.write(filename, format='dnas')
    with open(filename, 'rb') as fh:
        weights = SupernetWeights.read(fh, format='dnas', space=tiny_space)
    assert weights.checksums() == pretrained_weights.checksums()


def test_reload_and_rewrite_is_byte_identical(finetuned_weights, tiny_space, tmp_path):
    first, second = tmp_path / 'first.dnas', tmp_path / 'second.dnas'
    finetuned_weights.write(first, format='dnas')
    SupernetWeights.read(first, space=tiny_space).write(second, format='dnas')
    assert first.read_bytes() == second.read_bytes()


def test_writes_are_byte_identical(pretrained_weights, tmp_path):
    first, second = tmp_path / 'a.dnas', tmp_path / 'b.dnas'
    pretrained_weights.write(first, format='dnas')
    pretrained_weights.write(second, format='dnas')
    assert first.read_bytes() == second.read_bytes()

    with pytest.raises(OSError, match='overwrite'):
        pretrained_weights.write(first, format='dnas')
    pretrained_weights.write(first, format='dnas', overwrite=True)


def _write_and_corrupt(weights, path, corrupt):
    weights.write(path, format='dnas')
    data = bytearray(Path(path).read_bytes())
    Path(path).write_bytes(bytes(corrupt(data)))
    return path


@pytest.mark.parametrize(('corrupt', 'match'),
                         [(lambda data: b'XXXX' + data[4:], 'not a supernet checkpoint'),
                          (lambda data: data[:4] + struct.pack('<I', 2) + data[8:],
                           'version'),
                          (lambda data: data[:8] + bytes([7]) + data[9:], 'phase'),
                          (lambda data: data[:-10], 'truncated'),
                          (lambda data: data[:20], 'truncated'),
                          (lambda data: data + b'\x00\x00', 'trailing')])
def test_corrupt_files(tiny_space, tmp_path, corrupt, match):
    weights = SupernetWeights.initialize(tiny_space, seed=0)
    filename = _write_and_corrupt(weights, tmp_path / 'bad.dnas', corrupt)
    with pytest.raises(CheckpointFormatError, match=match):
        SupernetWeights.read(filename, format='dnas', space=tiny_space)


def test_space_mismatch(tiny_space, tmp_path):
    weights = SupernetWeights.initialize(tiny_space, seed=0)
    filename = tmp_path / 'supernet.dnas'
    weights.write(filename, format='dnas')
    other = SearchSpaceSpec(8, ((8, 1), (16, 1), (32, 1)), name='other')
    with pytest.raises(CheckpointFormatError, match='does not match'):
        SupernetWeights.read(filename, format='dnas', space=other)
    with pytest.raises(ValueError, match='space'):
        SupernetWeights.read(filename, format='dnas')


def test_float32_storage(tiny_space, tmp_path):
    weights = SupernetWeights.initialize(tiny_space, seed=0)
    filename = tmp_path / 'supernet.dnas'
    weights.write(filename, format='dnas')
    again = SupernetWeights.read(filename, format='dnas', space=tiny_space)
    for (name, array), (_, other) in zip(weights.named_tensors(), again.named_tensors()):
        assert other.dtype == np.float32
        np.testing.assert_array_equal(array, other)
