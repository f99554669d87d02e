import argparse
import logging
import os
import sys

from dotenv import load_dotenv

from commands import register_commands
from services.errors import NumericalError, TrackingError, ValidationError

__version__ = "1.0.0"

# Load environment variables
load_dotenv()

logger = logging.getLogger("fusetrack")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4


def create_app():
    """Build the argument parser and the process configuration"""
    app_config = {
        "VERSION": __version__,
        "LOG_LEVEL": os.getenv("FUSETRACK_LOG_LEVEL", "INFO").upper(),
        "OUTPUT_DIR": os.getenv("FUSETRACK_OUTPUT_DIR", "runs"),
        "JOBS": int(os.getenv("FUSETRACK_JOBS", "1")),
        "FLOAT_MODE": os.getenv("FUSETRACK_FLOAT_MODE", "float64"),
    }

    parser = argparse.ArgumentParser(
        prog="fusetrack",
        description="RF/VO fusion tracking: simulate, label, train, evaluate, compare",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    # Register commands
    register_commands(subparsers, app_config)

    return parser, app_config


def main(argv=None):
    parser, app_config = create_app()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, app_config["LOG_LEVEL"], logging.INFO),
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        args.handler(args, app_config)
    except ValidationError as e:
        logger.error(f"Validation error: {e}")
        return EXIT_VALIDATION
    except OSError as e:
        logger.error(f"IO error: {e}")
        return EXIT_IO
    except NumericalError as e:
        logger.error(f"Numerical error: {e}")
        return EXIT_NUMERICAL
    except TrackingError as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_ERROR
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
