"""Example child for the external bit protocol.

Reads ``S <id>`` (open stream ``id`` with a fresh dataset) and ``X <id>``
(one resample indicator) from stdin and answers each ``X`` with a line
``0`` or ``1``. By default it runs the two-sample permutation test::

    mcpower run --sampler 'ext:cmd="python -m mcpower.ext_child --effect 1.0"'

``--constant`` answers every request with a fixed line, which is handy for
exercising the parent's error handling.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .samplers import PermutationStream, simulate_permutation_dataset


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python -m mcpower.ext_child")
    ap.add_argument("--K", type=int, default=4)
    ap.add_argument("--L", type=int, default=8)
    ap.add_argument("--effect", type=float, default=1.0)
    ap.add_argument("--sigma", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--constant", help="reply this line to every X request")
    args = ap.parse_args(argv)

    streams: dict[int, PermutationStream] = {}
    fd_in, out = sys.stdin.fileno(), sys.stdout
    pending = b""
    while True:
        chunk = os.read(fd_in, 1 << 16)
        if not chunk:
            return 0
        lines = (pending + chunk).split(b"\n")
        pending = lines.pop()
        replies = []
        for raw in lines:
            cmd, _, sid = raw.decode().strip().partition(" ")
            if cmd == "S":
                i = int(sid)
                rng = np.random.default_rng([args.seed, i])
                values = simulate_permutation_dataset(rng, args.K, args.L, args.effect, args.sigma)
                streams[i] = PermutationStream(i, values, args.K, rng)
            elif cmd == "X":
                if args.constant is not None:
                    replies.append(args.constant)
                else:
                    replies.append(str(int(streams[int(sid)].bits(1)[0])))
            elif cmd:
                print(f"unknown command {raw!r}", file=sys.stderr)
                return 2
        if replies:
            out.write("\n".join(replies) + "\n")
            out.flush()


if __name__ == "__main__":
    sys.exit(main())
