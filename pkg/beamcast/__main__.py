# beamcast/__main__.py
# Entry point for `python -m beamcast <subcommand> ...`.

from .cli import main

if __name__ == "__main__":
    main()
