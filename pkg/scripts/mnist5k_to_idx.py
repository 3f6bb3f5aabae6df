"""Write the 5000-image MNIST subset bundled with mlxtend as IDX files.

Usage:
    python scripts/mnist5k_to_idx.py OUT_DIR

Produces OUT_DIR/mnist5k-images-idx3-ubyte and OUT_DIR/mnist5k-labels-idx1-ubyte.
"""

import sys
from pathlib import Path

from oodgen.data import mnist5k_to_idx


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    out = Path(argv[0] if argv else "data")
    images, labels = mnist5k_to_idx(out)
    print(images)
    print(labels)


if __name__ == "__main__":
    main()
