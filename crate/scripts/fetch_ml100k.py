#!/usr/bin/env python3
"""Write the MovieLens-100K ratings file (u.data layout) to data/ml-100k/u.data.

Tries the GroupLens archive first. When that host is unreachable, falls back to
the copy of the same ratings table bundled in the pytorch-widedeep wheel on PyPI.
"""
import io
import os
import subprocess
import sys
import tempfile
import urllib.request
import zipfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
OUT = os.path.join(ROOT, "data", "ml-100k", "u.data")
GROUPLENS = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"


def from_grouplens():
    with urllib.request.urlopen(GROUPLENS, timeout=20) as resp:
        archive = zipfile.ZipFile(io.BytesIO(resp.read()))
    return archive.read("ml-100k/u.data")


def from_widedeep_wheel():
    import pandas as pd

    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "pytorch-widedeep==1.7.0",
             "--no-deps", "-q", "-d", tmp],
            check=True,
        )
        wheel = next(f for f in os.listdir(tmp) if f.endswith(".whl"))
        with zipfile.ZipFile(os.path.join(tmp, wheel)) as zf:
            raw = zf.read("pytorch_widedeep/datasets/data/MovieLens100k_data.parquet.brotli")
    df = pd.read_parquet(io.BytesIO(raw))
    df = df[["user_id", "movie_id", "rating", "timestamp"]]
    return df.to_csv(sep="\t", header=False, index=False).encode()


def main():
    if os.path.exists(OUT):
        print(f"{OUT} already present")
        return
    os.makedirs(os.path.dirname(OUT), exist_ok=True)
    try:
        data = from_grouplens()
    except Exception as exc:  # noqa: BLE001
        print(f"GroupLens download failed ({exc}); using PyPI wheel copy")
        data = from_widedeep_wheel()
    with open(OUT, "wb") as fh:
        fh.write(data)
    rows = data.count(b"\n")
    print(f"wrote {OUT} ({rows} rows)")


if __name__ == "__main__":
    main()
