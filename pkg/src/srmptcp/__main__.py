import sys

from srmptcp.cli import main

sys.exit(main())
