from pathlib import Path

import pytest

DATA_DIR = Path(__file__).parent / "data" / "wordnet"

TEN_CATEGORIES = [
    "car",
    "dog",
    "cat",
    "bicycle",
    "bus",
    "truck",
    "person",
    "horse",
    "bird",
    "boat",
]


@pytest.fixture
def wordnet_dir():
    return DATA_DIR


@pytest.fixture
def categories_file(tmp_path):
    path = tmp_path / "categories.txt"
    path.write_text("\n".join(TEN_CATEGORIES) + "\n", encoding="utf-8")
    return path
