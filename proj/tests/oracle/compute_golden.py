#!/usr/bin/env python3
"""Builds the three golden fixture trees and prints their reference hashes.

The same trees are constructed by tests/unit/test_archive.cpp (golden_hello / golden_empty_dir / golden_mixed_tree);
the values printed here are frozen there. Rerun after any fixture change:

    python3 tests/oracle/compute_golden.py
"""

import os
import sys
import tempfile

import nar_reference


def build_file(root: str) -> str:
    p = os.path.join(root, "f")
    with open(p, "wb") as f:
        f.write(b"hello\n")
    return p


def build_empty_dir(root: str) -> str:
    p = os.path.join(root, "d")
    os.mkdir(p)
    return p


def build_tree(root: str) -> str:
    p = os.path.join(root, "t")
    os.mkdir(p)
    os.mkdir(os.path.join(p, "bin"))
    with open(os.path.join(p, "bin", "jq"), "wb") as f:
        f.write(b"\x7fELF\x02\x01\x01\x00jq-payload\x00")
    os.chmod(os.path.join(p, "bin", "jq"), 0o755)
    with open(os.path.join(p, "README"), "wb") as f:
        f.write(b"jq - commandline JSON processor\n")
    os.mkdir(os.path.join(p, "share"))
    with open(os.path.join(p, "share", "empty"), "wb"):
        pass
    os.symlink("../bin/jq", os.path.join(p, "share", "jq-link"))
    return p


def main() -> int:
    with tempfile.TemporaryDirectory() as root:
        for label, build in [
            ("regular-hello", build_file),
            ("empty-dir", build_empty_dir),
            ("mixed-tree", build_tree),
        ]:
            path = build(root)
            nar = nar_reference.encode(path)
            import hashlib

            print(f"{label}: sha256:{hashlib.sha256(nar).hexdigest()} ({len(nar)} bytes)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
