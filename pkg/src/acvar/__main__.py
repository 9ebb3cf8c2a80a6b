import sys

from acvar.cli import main

sys.exit(main())
