# salad is distributed under the terms of the BSD 3-clause license.
# Consult LICENSE.txt or http://opensource.org/licenses/BSD-3-Clause.
"""
Self-assessment learning for temporal action detection.
"""

try:
    from ._version import version as __version__
except ImportError:
    try:
        from importlib.metadata import version

        __version__ = version("salad")
        del version
    except ImportError:
        __version__ = "0.0.0.unknown"
