"""Channel-swap scanner-transform stub for exercising the adapter protocol.

Reads an RGB PNG, swaps the red and blue channels, writes the result:
    python3 -m stainforge.st_stub <in.png> <out.png> <domain>
The domain argument is accepted (and ignored) so the stub matches the real
adapter command shape.
"""

from __future__ import annotations

import sys

import numpy as np
from PIL import Image


def main(argv: list[str] | None = None) -> int:
    args = sys.argv[1:] if argv is None else argv
    if len(args) != 3:
        print("usage: st_stub <in.png> <out.png> <domain>", file=sys.stderr)
        return 1
    in_path, out_path, _domain = args
    data = np.asarray(Image.open(in_path).convert("RGB"), dtype=np.uint8)
    Image.fromarray(data[:, :, ::-1], mode="RGB").save(out_path, format="PNG")
    return 0


if __name__ == "__main__":
    sys.exit(main())
