#!/usr/bin/env python3
"""Fetch MovieLens-100K ratings into data/ml-100k/u.data.

The ratings are taken from the copy bundled in the recbole wheel
(`recbole/dataset_example/ml-100k/ml-100k.inter`), which carries the same
100,000 user/item/rating/timestamp rows as the original u.data with an
extra header line.
"""

import argparse
import hashlib
import pathlib
import subprocess
import sys
import tempfile
import zipfile

WHEEL = "recbole==1.2.1"
MEMBER = "recbole/dataset_example/ml-100k/ml-100k.inter"
EXPECTED_MD5 = "6e47046882bad158b0efbb84cd5cb987"


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent / "data" / "ml-100k"))
    args = parser.parse_args()
    out_dir = pathlib.Path(args.out)
    target = out_dir / "u.data"

    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "--quiet", "--dest", tmp, WHEEL],
            check=True,
        )
        wheel = next(pathlib.Path(tmp).glob("*.whl"))
        with zipfile.ZipFile(wheel) as zf:
            lines = zf.read(MEMBER).decode("utf-8").splitlines()

    body = "".join(line + "\n" for line in lines[1:] if line.strip())
    digest = hashlib.md5(body.encode("utf-8")).hexdigest()
    if digest != EXPECTED_MD5:
        print(f"checksum mismatch: got {digest}, expected {EXPECTED_MD5}", file=sys.stderr)
        return 1
    out_dir.mkdir(parents=True, exist_ok=True)
    target.write_text(body)
    print(f"wrote {target} ({len(body.splitlines())} ratings)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
