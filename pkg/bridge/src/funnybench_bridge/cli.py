"""Bridge launcher: serve a model over stdio or TCP."""

from __future__ import annotations

import argparse
import sys

from .loaders import load_model
from .server import BridgeConfig, serve


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="funnybench-bridge",
        description="Expose a model over the funnybench wire protocol.",
    )
    mode = parser.add_mutually_exclusive_group(required=True)
    mode.add_argument("--stdio", action="store_true", help="serve on stdin/stdout")
    mode.add_argument("--tcp", metavar="HOST:PORT",
                      help="listen on HOST:PORT (PORT 0 picks a free port, printed to stderr)")
    parser.add_argument("--model", required=True,
                        help="model spec: constant:FILE, linear:FILE, reference:FILE, "
                             "torch-reference:FILE, or module.path:callable")
    parser.add_argument("--model-arg", action="append", default=[],
                        help="positional string argument for a module:callable loader (repeatable)")
    parser.add_argument("--resolution", type=int,
                        help="reject requests whose images are not this size")
    parser.add_argument("--capabilities",
                        help="comma-separated subset to advertise (e.g. 'predict')")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        model = load_model(args.model, args.model_arg)
    except Exception as exc:
        print(f"error: cannot load model {args.model!r}: {exc}", file=sys.stderr)
        return 2
    capabilities = None
    if args.capabilities:
        capabilities = tuple(c.strip() for c in args.capabilities.split(",") if c.strip())
    if args.stdio:
        config = BridgeConfig(mode="stdio", resolution=args.resolution, capabilities=capabilities)
    else:
        host, _, port = args.tcp.rpartition(":")
        if not host or not port.isdigit():
            print(f"error: --tcp expects HOST:PORT, got {args.tcp!r}", file=sys.stderr)
            return 2
        config = BridgeConfig(mode="tcp", host=host, port=int(port),
                              resolution=args.resolution, capabilities=capabilities)
    try:
        serve(model, config)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
