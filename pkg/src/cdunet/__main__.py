"""Main entry point for the CDUNet toolkit."""

from cdunet_shell.cli import main

if __name__ == "__main__":
    main()
