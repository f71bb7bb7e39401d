from __future__ import annotations

import json
from pathlib import Path

import pytest
from hypothesis import settings

from oicc import analysis, codegen, frontend

settings.register_profile("suite", deadline=None, max_examples=200)
settings.load_profile("suite")

CORPUS_DIR = Path(__file__).resolve().parent.parent / "corpus"


@pytest.fixture(scope="session")
def corpus_dir() -> Path:
    return CORPUS_DIR


@pytest.fixture(scope="session")
def manifest() -> dict:
    return json.loads((CORPUS_DIR / "manifest.json").read_text())


@pytest.fixture(scope="session")
def corpus(manifest) -> dict[str, frontend.CheckedAst]:
    """name (stem) -> checked AST for every corpus program."""
    out = {}
    for entry in manifest["programs"]:
        path = CORPUS_DIR / entry["file"]
        out[path.stem] = frontend.parse_and_check(path.read_text())
    return out


@pytest.fixture(scope="session")
def nominals(corpus) -> dict[str, codegen.NominalCode]:
    return {name: codegen.lower_nominal(ch) for name, ch in corpus.items()}


@pytest.fixture(scope="session")
def stats_ensemble(corpus) -> analysis.Ensemble:
    """The big fixed-input ensemble shared by the statistical criteria."""
    return analysis.ensemble(corpus["stats_loop"], list(range(4096)), {"n": 8})


def checked_of(src: str) -> frontend.CheckedAst:
    return frontend.parse_and_check(src)
