import sys

from smallnoise.harness.cli import main

sys.exit(main())
