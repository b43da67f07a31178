"""Build tests/assets/qwen_vocab.json (plain surface -> id map) from Qwen's BPE rank file.

The rank file (``qwen.tiktoken``: base64 token bytes + rank per line) holds the 151,643
regular tokens shared by the Qwen tokenizer family. It ships inside the ``dashscope``
wheel; pass --tiktoken to use a local copy instead.

    python scripts/fetch_qwen_vocab.py                 # pip-downloads dashscope into a temp dir
    python scripts/fetch_qwen_vocab.py --tiktoken qwen.tiktoken
"""

import argparse
import base64
import json
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

from tokensmooth.vocab import encode_surface

DEFAULT_OUT = Path(__file__).resolve().parent.parent / "tests" / "assets" / "qwen_vocab.json"
MEMBER = "dashscope/resources/qwen.tiktoken"


def rank_file_from_wheel() -> bytes:
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "dashscope", "--no-deps", "-q", "-d", tmp],
            check=True,
        )
        wheel = next(Path(tmp).glob("dashscope-*.whl"))
        with zipfile.ZipFile(wheel) as z:
            return z.read(MEMBER)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tiktoken", type=Path)
    ap.add_argument("--out", type=Path, default=DEFAULT_OUT)
    args = ap.parse_args()

    data = args.tiktoken.read_bytes() if args.tiktoken else rank_file_from_wheel()
    vocab = {}
    for line in data.splitlines():
        if not line.strip():
            continue
        token, rank = line.split()
        vocab[encode_surface(base64.b64decode(token))] = int(rank)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(vocab, ensure_ascii=False), encoding="utf-8")
    print(f"wrote {len(vocab)} entries to {args.out}")


if __name__ == "__main__":
    main()
