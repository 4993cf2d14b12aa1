"""
Entry point for the salad CLI
"""

if __name__ == "__main__":
    import sys

    from salad.main import main

    sys.exit(main())
