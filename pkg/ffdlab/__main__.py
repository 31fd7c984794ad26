import sys

from ffdlab.cli import main

sys.exit(main())
