"""Run the named studies (default: all) and print their metrics as JSON lines.

    python scripts/run_studies.py vortex_moment pde_blowup
    python scripts/run_studies.py --list
"""
import argparse
import json

from singmf import studies
from singmf.harness.output import jsonable

STUDIES = [
    "vortex_moment", "ks_moment", "dyson_identity", "dyson_gaps", "riesz_monotonicity", "ks_negative_moment",
    "pde_dissipation", "pde_blowup", "chaos_rate", "cross_method", "estimator_suite", "hierarchy",
]


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("names", nargs="*", metavar="study")
    ap.add_argument("--list", action="store_true", help="print the study names and exit")
    args = ap.parse_args()
    if args.list:
        print("\n".join(STUDIES))
        return
    unknown = sorted(set(args.names) - set(STUDIES))
    if unknown:
        ap.error(f"unknown study: {', '.join(unknown)} (see --list)")
    for name in args.names or STUDIES:
        metrics = getattr(studies, name)()
        print(json.dumps({"study": name, **jsonable(metrics)}), flush=True)


if __name__ == "__main__":
    main()
