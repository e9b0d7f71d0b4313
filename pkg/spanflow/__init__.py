#
# Copyright (c) - All Rights Reserved.
#
# This project is licenced under the GPLv3.
# See the LICENSE file for more information.
#

"""Span graphs of document pages and a masked graph-transformer encoder."""

__version__ = "0.1.0"
