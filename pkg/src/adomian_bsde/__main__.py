import sys

from adomian_bsde.cli import main

sys.exit(main())
