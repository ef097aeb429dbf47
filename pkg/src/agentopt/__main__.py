import sys

from agentopt.cli import main

sys.exit(main())
