# The read and write methods for SupernetWeights are defined in this file and
# then added to the class using UnifiedReadWriteMethod. This makes it possible
# to dynamically add the available formats to the read/write docstrings. For
# more information about the unified I/O framework from Astropy which is used
# to implement this, see http://docs.astropy.org/en/stable/io/unified.html

from pathlib import PurePath

from astropy.io import registry

__doctest_skip__ = ['SupernetWeightsRead',
                    'SupernetWeightsWrite']

DOCSTRING_READ_TEMPLATE = """
Read a supernet checkpoint and return it as a {clsname}

This allows reading a checkpoint using syntax such as::

    >>> from backbone_nas import {clsname}, SMALL_SPACE
    >>> weights = {clsname}.read('supernet.dnas', format='dnas', space=SMALL_SPACE)

The search space is not stored in the checkpoint and must be given.

Get help on the available readers for {clsname} using the``help()`` method::

    >>> {clsname}.read.help()  # Get help reading {clsname} and list supported formats
    >>> {clsname}.read.list_formats()  # Print list of available formats

Parameters
----------
*args : tuple, optional
    Positional arguments passed through to the reader. If supplied the
    first argument is typically the input filename.
format : str
    File format specifier.
**kwargs : dict, optional
    Keyword arguments passed through to the reader.

Returns
-------
weights : `{clsname}`
"""

DOCSTRING_WRITE_TEMPLATE = """
Write this {clsname} object out in the specified format.

This allows writing a checkpoint using syntax such as::

    >>> weights.write('supernet.dnas', format='dnas')

Get help on the available writers for {clsname} using the``help()`` method::

    >>> {clsname}.write.help()  # Get help writing {clsname} and list supported formats
    >>> {clsname}.write.list_formats()  # Print list of available formats

Parameters
----------
*args : tuple, optional
    Positional arguments passed through to the writer. If supplied the
    first argument is the output filename.
format : str
    File format specifier.
**kwargs : dict, optional
    Keyword arguments passed through to the writer.
"""


class SupernetWeightsRead(registry.UnifiedReadWrite):

    __doc__ = DOCSTRING_READ_TEMPLATE.format(clsname='SupernetWeights')

    def __init__(self, instance, cls):
        super().__init__(instance, cls, 'read')

    def __call__(self, filename, *args, **kwargs):
        if isinstance(filename, PurePath):
            filename = str(filename)
        return registry.read(self._cls, filename, *args, **kwargs)


class SupernetWeightsWrite(registry.UnifiedReadWrite):

    __doc__ = DOCSTRING_WRITE_TEMPLATE.format(clsname='SupernetWeights')

    def __init__(self, instance, cls):
        super().__init__(instance, cls, 'write')

    def __call__(self, filename, *args, **kwargs):
        if isinstance(filename, PurePath):
            filename = str(filename)
        registry.write(self._instance, filename, *args, **kwargs)
