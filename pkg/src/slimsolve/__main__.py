import sys

from slimsolve.cli import main

sys.exit(main())
