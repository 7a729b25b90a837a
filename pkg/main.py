import os
import sys

from config import get_config, thread_environment

# BLAS reads its thread count at import time, so this runs before numpy loads
os.environ.update(thread_environment(get_config(deterministic='--deterministic' in sys.argv)))

from cli import main  # noqa: E402

if __name__ == '__main__':
    sys.exit(main())
