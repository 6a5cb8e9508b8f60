from __future__ import annotations

from pathlib import Path

import pytest

from imptrace import cfg as C
from imptrace import corelang as cl

REPO = Path(__file__).resolve().parent.parent
CORPUS = REPO / "corpus"


@pytest.fixture(scope="session")
def corpus_dir() -> Path:
    return CORPUS


def build(source: str, name: str = "<test>") -> C.StaticCfg:
    return C.build(cl.desugar(cl.parse(source, name)))


@pytest.fixture(scope="session")
def corpus_cfgs() -> dict:
    out = {}
    for path in sorted(CORPUS.glob("*.js")):
        out[path.name] = build(path.read_text(encoding="utf-8"), path.name)
    return out


EACH_SRC = (CORPUS / "each.js").read_text(encoding="utf-8")
HEAPCLONE1_SRC = (CORPUS / "heapclone1.js").read_text(encoding="utf-8")
HEAPCLONE2_SRC = (CORPUS / "heapclone2.js").read_text(encoding="utf-8")
