import sys

from sensortrust.cli import main

sys.exit(main())
