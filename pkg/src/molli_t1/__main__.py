import sys

from molli_t1.cli import main

sys.exit(main())
