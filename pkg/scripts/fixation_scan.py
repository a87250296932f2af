"""Fixation fraction and origin odometer across volumes and densities."""

import argparse

from arwssm.experiments import ScanSpec, fixation_monotone, scan


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", default="ssm")
    ap.add_argument("--lam", default="1")
    ap.add_argument("--mus", default="0.1,0.2,0.3,0.5,0.7,0.9,1.1,1.5")
    ap.add_argument("--Ls", default="100,1000,10000")
    ap.add_argument("--replicas", type=int, default=500)
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--workers", type=int, default=4)
    ap.add_argument("--out", default="scan.csv")
    args = ap.parse_args()
    spec = ScanSpec(model=args.model, lam=args.lam, mus=args.mus, Ls=args.Ls, replicas=args.replicas,
                    seed=args.seed, workers=args.workers)
    res = scan(spec)
    with open(args.out, "w") as fh:
        fh.write(res.to_csv())
    print(f"{'L':>7} {'mu':>5} {'P[m(0)=0]':>10} {'median m(0)':>12} {'trunc':>6}")
    for c in res.cells:
        print(f"{c['L']:>7} {c['mu']:>5} {c['fixation_fraction']['mean']:>10.3f} "
              f"{c['origin_odometer']['median']:>12.1f} {c['truncated']:>6}")
    print("odometers monotone in density:", fixation_monotone(res))


if __name__ == "__main__":
    main()
