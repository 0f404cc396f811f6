import sys

from gateservo.cli import main

sys.exit(main())
