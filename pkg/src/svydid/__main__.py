from svydid.cli import main
import sys

sys.exit(main())
