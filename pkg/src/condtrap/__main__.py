import sys

from condtrap.cli import main

sys.exit(main())
