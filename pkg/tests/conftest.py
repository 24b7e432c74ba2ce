import json
from pathlib import Path

import pytest

from tagforge.caption_parser import load_lexicons

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def lexicons():
    return load_lexicons()


@pytest.fixture(scope="session")
def golden_corpus():
    return json.loads((DATA_DIR / "golden_captions.json").read_text(encoding="utf-8"))
