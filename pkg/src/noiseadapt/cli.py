"""Command-line interface: ``noiseadapt {generate,features,train,evaluate,scatter}``.

Every verb reads the same experiment config (a built-in profile, optionally
overridden by a YAML file and by flags) and works inside its output
directory. Errors are reported as one ``noiseadapt: error: ...`` line on
stderr with a nonzero exit status; refusing to overwrite exits with 2.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__, artifacts
from .adaptation import METHODS
from .config import PROFILES, load_config
from .errors import InvalidArgumentError, NoiseAdaptError

EXIT_ERROR = 1
EXIT_USAGE = 2


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML experiment config")
    p.add_argument("--profile", choices=sorted(PROFILES), help="built-in defaults (default: desk)")
    p.add_argument("--seed", type=int, help="master seed for corpus and training")
    p.add_argument("--output", help="run directory (overrides the config)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for per-utterance stages")
    p.add_argument("--force", action="store_true", help="overwrite existing stage output")
    p.add_argument("-q", "--quiet", action="store_true", help="only print errors")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="noiseadapt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    method_choices = ["all", *METHODS]

    p = sub.add_parser("generate", help="synthesise the noisy corpus")
    _common(p)
    p = sub.add_parser("features", help="spliced MFCC + LDA features")
    _common(p)
    p = sub.add_parser("train", help="train one or all systems")
    _common(p)
    p.add_argument("--method", choices=method_choices, default="all")
    p = sub.add_parser("evaluate", help="score trained systems on the test and unseen splits")
    _common(p)
    p.add_argument("--method", choices=method_choices, default="all")
    p = sub.add_parser("scatter", help="2-D projection of a system's input features")
    _common(p)
    p.add_argument("--method", choices=method_choices, default="all")
    p.add_argument("--split", choices=["train", "dev", "test", "unseen"])
    p.add_argument("--points", type=int, help="rows to export (default 700)")
    return parser


def _run(args) -> None:
    cfg = load_config(args.config, args.profile, args.seed, args.output)
    if args.jobs < 1:
        raise InvalidArgumentError("--jobs must be at least 1")
    cmd = args.command
    if cmd == "generate":
        out = artifacts.generate(cfg, args.jobs, args.force)
        print(f"corpus: {out} (run {cfg.run_id})")
    elif cmd == "features":
        out = artifacts.features(cfg, args.jobs, args.force)
        print(f"features: {out}")
    elif cmd == "train":
        for out in artifacts.train(cfg, args.method, args.force):
            print(f"system: {out}")
    elif cmd == "evaluate":
        results = artifacts.evaluate(cfg, args.method)
        for split, res in results.items():
            if res["comparison"] is not None:
                print(f"[{split}]\n{res['comparison']}", end="")
            else:
                for rep in res["reports"].values():
                    print(f"[{split}]\n{rep.to_table()}", end="")
    elif cmd == "scatter":
        for out in artifacts.scatter(cfg, args.method, args.split, args.points):
            print(f"scatter: {out}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _run(args)
    except artifacts.OutputExistsError as exc:
        print(f"noiseadapt: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NoiseAdaptError, ValueError, RuntimeError, OSError) as exc:
        msg = " ".join(str(exc).split())
        print(f"noiseadapt: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return EXIT_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
