import sys

from favor.bench import main

sys.exit(main())
