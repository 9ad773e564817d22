"""Command line: run, reproduce, modal, sweep and list.

Errors go to stderr as one JSON object ``{"error": type, "message": ...}``
and the process exits nonzero.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__


def _values(text):
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        try:
            out.append(int(tok))
        except ValueError:
            try:
                out.append(float(tok))
            except ValueError:
                out.append(tok)
    return out


def _parser():
    p = argparse.ArgumentParser(prog="evmma", description="EV-load forced-oscillation experiments")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="run one scenario")
    r.add_argument("scenario", help="scenario file or bundled name")
    r.add_argument("--out", default=None, help="directory for traces, report and manifest")
    r.add_argument("--seed", type=int, default=None)

    rp = sub.add_parser("reproduce", help="write the data behind one figure or table")
    rp.add_argument("figure_id")
    rp.add_argument("--out", default="results")

    m = sub.add_parser("modal", help="modal analysis of a scenario's operating point")
    m.add_argument("scenario")

    s = sub.add_parser("sweep", help="vary one scenario field")
    s.add_argument("scenario")
    s.add_argument("--param", required=True, help="dotted field path, e.g. pile.load")
    s.add_argument("--values", required=True, type=_values, help="comma-separated values")
    s.add_argument("--simulate", action="store_true", help="run full simulations instead of modal only")
    s.add_argument("--workers", type=int, default=None)

    ls = sub.add_parser("list", help="list bundled and user scenarios")
    ls.add_argument("--user-dir", default=None)
    return p


def _dispatch(args):
    from . import scenarios as sc

    if args.verb == "run":
        rep = sc.run_scenario(args.scenario, seed=args.seed, out_dir=args.out)
        return rep.to_dict()
    if args.verb == "reproduce":
        paths = sc.reproduce(args.figure_id, args.out)
        return {"figure": args.figure_id, "files": [str(p) for p in paths]}
    if args.verb == "modal":
        return sc.modal_report(args.scenario)
    if args.verb == "sweep":
        rows = sc.sweep(args.scenario, args.param, args.values, modal_only=not args.simulate,
                        max_workers=args.workers)
        return {"param": args.param, "rows": rows}
    if args.verb == "list":
        return {"scenarios": sc.list_scenarios(args.user_dir)}
    raise ValueError(f"unknown verb {args.verb}")


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        result = _dispatch(args)
    except Exception as err:  # every failure becomes a machine-readable record
        info = {"error": type(err).__name__, "message": str(err)}
        if getattr(err, "path", None):
            info["path"] = err.path
        print(json.dumps(info), file=sys.stderr)
        return 1
    from .scenarios import _plain
    print(json.dumps(_plain(result), indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
