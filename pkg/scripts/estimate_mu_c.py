"""Critical density of SSM and of ARW with instant sleep from survival-curve crossings."""

import argparse
import json
import time

from arwssm.experiments import estimate_mu_c
from arwssm.lattice import Model

CASES = {
    "ssm": (Model.ssm(), (1000, 3000, 10000)),
    "arw-inf": (Model.arw("inf"), (300, 1000, 3000)),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--cases", default="ssm,arw-inf")
    ap.add_argument("--replicas", type=int, default=200)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--workers", type=int, default=4)
    ap.add_argument("--bootstrap", type=int, default=1000)
    ap.add_argument("--out", default="mu_c.jsonl")
    args = ap.parse_args()
    with open(args.out, "w") as fh:
        for name in args.cases.split(","):
            model, Ls = CASES[name]
            t = time.time()
            est = estimate_mu_c(model, Ls, args.replicas, args.seed, bootstrap=args.bootstrap, workers=args.workers)
            lo, hi = est.interval
            print(f"{name}: mu_c = {est.value:.4f} +- {est.stderr:.4f}  [{lo:.4f}, {hi:.4f}]  "
                  f"medians {est.medians}  ({time.time() - t:.0f}s)")
            for rec in est.records():
                fh.write(json.dumps({"case": name, **rec}, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
