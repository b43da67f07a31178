"""Write the 64-token synthetic checkpoint used by the tests, for trying the CLI by hand.

    python scripts/make_fixture_checkpoint.py /tmp/fixture --dtype BF16 --shards 2
    tokensmooth smooth --config configs/default.json --model /tmp/fixture --output /tmp/fixture-smoothed
"""

import argparse

from tokensmooth.testing import make_checkpoint


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out")
    ap.add_argument("--dtype", choices=["F32", "F16", "BF16"], default="BF16")
    ap.add_argument("--shards", type=int, choices=[1, 2], default=1)
    ap.add_argument("--tied", action="store_true")
    ap.add_argument("--hidden", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    path = make_checkpoint(args.out, args.dtype, shards=args.shards, tied=args.tied,
                           hidden=args.hidden, seed=args.seed)
    print(path)


if __name__ == "__main__":
    main()
