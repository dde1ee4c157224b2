import logging
import sys

import click

from .errors import EXIT_OK, EXIT_USAGE, SbfimlError

__version__ = "0.1.0"


def create_cli():
    from .config import configure_logging
    configure_logging(logging.WARNING)

    from .cli import cli
    return cli


def main(argv=None) -> int:
    """Run the command line and return its exit code."""
    cli = create_cli()
    try:
        cli.main(args=argv, prog_name="sbfiml", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("Aborted!", err=True)
        return EXIT_USAGE
    except click.ClickException as e:
        e.show()
        return EXIT_USAGE
    except SbfimlError as e:
        click.echo(f"Error: {e}", err=True)
        return e.exit_code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
