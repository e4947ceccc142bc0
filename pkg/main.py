#!/usr/bin/env python3
# ABOUTME: Main entry point for PulseFocus
# ABOUTME: Launches the command-line interface

from pulse_focus.cli import cli


def main():
    """Run the PulseFocus CLI."""
    cli(obj={})


if __name__ == "__main__":
    main()
