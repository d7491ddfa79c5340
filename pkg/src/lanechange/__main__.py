from __future__ import annotations

from lanechange.pipeline.runner import run


def main() -> None:
    raise SystemExit(run())


if __name__ == "__main__":
    main()
