#
# Copyright (c) - All Rights Reserved.
#
# This project is licenced under the GPLv3.
# See the LICENSE file for more information.
#

"""Allow ``python -m spanflow``."""

from spanflow.cli import main

if __name__ == "__main__":
    main()
