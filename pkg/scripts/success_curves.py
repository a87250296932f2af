"""Certificate success frequency against density, for the barrier construction."""

import argparse
import time

from arwssm.experiments import certifier_success_curve
from arwssm.lattice import Model


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", default="arw")
    ap.add_argument("--lam", default="1")
    ap.add_argument("--mus", default="0.05,0.1,0.2,0.3")
    ap.add_argument("--n", type=int, default=50)
    ap.add_argument("--replicas", type=int, default=40)
    ap.add_argument("--seed", type=int, default=5)
    args = ap.parse_args()
    model = Model.ssm() if args.model == "ssm" else Model.arw(args.lam)
    t = time.time()
    curve = certifier_success_curve(model, args.mus, args.n, args.replicas, args.seed)
    for mu, s, f in zip(curve.mus, curve.successes, curve.frequencies):
        print(f"mu={mu:<6} successes {s:>4}/{curve.replicas}  freq {f:.3f}")
    print(f"L={curve.L} monotone={curve.monotone} ({time.time() - t:.0f}s)")


if __name__ == "__main__":
    main()
