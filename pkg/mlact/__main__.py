import sys

from mlact.main import main

sys.exit(main())
