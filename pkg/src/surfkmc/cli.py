"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure
(partial artifacts are kept and the manifest lists what failed).
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import SpecError, load_spec, parse_spec
from .errors import NumericalError
from .harness import run_experiment
from .potential import Potential
from .tension import TensionSpec, sigma_c, sigma_d, tabulate


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--spec", required=True, help="JSON spec file")
    p.add_argument("--seed", type=int, help="override the spec seed")
    p.add_argument("--out", help="override the output directory")
    p.add_argument("--threads", type=int, help="worker count override")


def _load(args, force_experiment: str | None = None):
    try:
        with open(args.spec) as fh:
            doc = json.load(fh)
    except OSError as e:
        raise SpecError(f"cannot read spec file: {e}") from None
    except json.JSONDecodeError as e:
        raise SpecError(f"spec file is not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise SpecError("spec document must be a JSON object")
    if force_experiment is not None:
        doc["experiment"] = force_experiment
    spec = parse_spec(doc)
    if args.seed is not None:
        spec.seed = args.seed
    if args.out is not None:
        spec.out = args.out
    if args.threads is not None:
        spec.threads = args.threads
    return spec


def _run_spec(args, force_experiment=None) -> int:
    spec = _load(args, force_experiment)
    art = run_experiment(spec)
    print(f"wrote {len(art.manifest['files'])} files to {art.out_dir}")
    if art.failures:
        for f in art.failures:
            print(f"failure in {f.get('stage')}: {f.get('error')} "
                  f"{f.get('message', '')}".rstrip(), file=sys.stderr)
        return 3
    return 0


def _cmd_sigma_table(args) -> int:
    V = Potential(args.p)
    spec = TensionSpec(args.K, V, tol=args.tol)
    fn = sigma_d if args.kind == "discrete" else sigma_c
    if not (args.u_max > args.u_min):
        raise SpecError("--u-max must exceed --u-min")
    table = tabulate(lambda u: fn(u, spec), args.u_min, args.u_max,
                     args.points,
                     meta={"tension": args.kind, "K": args.K, "p": args.p})
    table.write_csv(args.out)
    print(f"wrote {args.points} points to {args.out}")
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="surfkmc",
        description="lattice growth simulations and their continuum limits")
    sub = ap.add_subparsers(dest="command", required=True)

    for name, forced in (("run", None), ("self-similar", "self_similar"),
                         ("wetting", "wetting"),
                         ("generator-test", "generator_test")):
        sp = sub.add_parser(name)
        _add_common(sp)
        sp.set_defaults(func=lambda a, f=forced: _run_spec(a, f))

    st = sub.add_parser("sigma-table",
                        help="tabulate a surface tension to CSV")
    st.add_argument("--kind", choices=["discrete", "continuous"],
                    default="discrete")
    st.add_argument("--p", type=float, default=1.0)
    st.add_argument("--K", type=float, required=True)
    st.add_argument("--u-min", dest="u_min", type=float, default=-1.0)
    st.add_argument("--u-max", dest="u_max", type=float, default=1.0)
    st.add_argument("--points", type=int, default=257)
    st.add_argument("--tol", type=float, default=1e-12)
    st.add_argument("--out", required=True)
    st.set_defaults(func=_cmd_sigma_table)

    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except SpecError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (NumericalError, ValueError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
