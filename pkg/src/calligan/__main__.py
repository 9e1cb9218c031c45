"""Allow `python -m calligan`."""

import sys

from .cli import main

sys.exit(main())
