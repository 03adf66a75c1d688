import sys

from phasebal.cli import main

sys.exit(main())
