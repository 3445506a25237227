from pathlib import Path

import pytest

from llmdr.grid_map import GridMap

DATA = Path(__file__).parent / "data"


def open_map(width: int, height: int) -> GridMap:
    return GridMap.from_rows(["." * width] * height, name=f"open{width}x{height}")


@pytest.fixture
def open3():
    return open_map(3, 3)


@pytest.fixture
def data_dir():
    return DATA
