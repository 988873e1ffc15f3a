import sys

from gckf.cli import main

sys.exit(main())
