import argparse
import logging
import sys
import traceback
from typing import List, Optional

from . import database
from .commands import cli_router
from .errors import IlmError

logger = logging.getLogger("ilm")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="run config (TOML)")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out", default=None, help=f"pipeline directory (default: {database.PIPELINE_DIR})")
    common.add_argument("--log-level", default=None, help=f"logging level (default: {database.LOG_LEVEL})")
    common.add_argument("--progress", action="store_true", help="show training progress bars")

    parser = argparse.ArgumentParser(
        prog="ilm",
        description="Item-language model pipeline: CF embeddings, Q-Former alignment, frozen-backbone fusion "
                    "and generative-retrieval evaluation",
    )
    cli_router.add_subparsers(parser, common)
    return parser


def configure_logging(level: Optional[str]) -> None:
    name = (level or database.LOG_LEVEL).upper()
    if not isinstance(logging.getLevelName(name), int):
        name = "INFO"
    logging.basicConfig(level=name, format=LOG_FORMAT, stream=sys.stderr, force=True)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(getattr(args, "log_level", None))
    try:
        return args.handler(args)
    except IlmError as e:
        logger.debug(traceback.format_exc())
        print(f"error[{e.category}]: {e}", file=sys.stderr)
        return e.exit_code
    except KeyboardInterrupt:
        print("error[interrupted]: stopped by user", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
