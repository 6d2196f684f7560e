from __future__ import annotations

import argparse
import glob
import os

from backend.app.services import dedup


IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp")


def main():
    ap = argparse.ArgumentParser(description="p-hash every image in a folder and flag near-duplicates")
    ap.add_argument("path", help="Folder or glob (e.g., data/*.png)")
    ap.add_argument("--max-distance", type=int, default=0, help="Hamming distance counted as duplicate")
    args = ap.parse_args()

    if os.path.isdir(args.path):
        files = sorted(os.path.join(args.path, f) for f in os.listdir(args.path) if f.lower().endswith(IMAGE_EXTS))
    else:
        files = sorted(glob.glob(args.path))

    print("file,phash,duplicate_of,distance")
    seen = []
    for fp in files:
        name = os.path.basename(fp)
        try:
            h = dedup.phash_file(fp)
        except Exception as e:
            print(f"{name},,,'error:{e}'")
            continue
        match = next(((n, dedup.hamming(h, prev)) for n, prev in seen if dedup.hamming(h, prev) <= args.max_distance), None)
        if match:
            print(f"{name},{h.hex()},{match[0]},{match[1]}")
        else:
            print(f"{name},{h.hex()},,")
            seen.append((name, h))


if __name__ == "__main__":
    main()
