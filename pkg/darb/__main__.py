import sys

from darb.main import main

sys.exit(main())
