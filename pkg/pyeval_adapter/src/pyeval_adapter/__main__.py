"""Entry point: ``python -m pyeval_adapter --config adapter.json``."""

import argparse

from .service import ServiceConfig, serve


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pyeval-adapter",
        description="Line-protocol pipeline evaluator (toy scikit-learn space)")
    parser.add_argument("--config", help="JSON config "
                        "(dataset, rows, seed, emit_groups, ...)")
    args = parser.parse_args(argv)
    config = (ServiceConfig.from_file(args.config) if args.config
              else ServiceConfig())
    serve(config)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
