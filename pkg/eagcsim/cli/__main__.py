"""``python -m eagcsim.cli``: same as the ``eagc-sim`` console script."""

import sys

from .main import main

sys.exit(main())
