"""
Long-tail Gaussian mixture experiments - command-line entry point.
Usage: python ltgmm.py <command> [--config config/experiment_config.yaml] [--set key=value ...]
"""
import sys

from experiments.cli import main

if __name__ == '__main__':
    sys.exit(main())
