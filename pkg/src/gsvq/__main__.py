import sys

from gsvq.cli import main

sys.exit(main())
