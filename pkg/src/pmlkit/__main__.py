import sys

from pmlkit.cli import main

sys.exit(main())
