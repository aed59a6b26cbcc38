import pathlib

import pytest

from tensched.pipeline_ir import parse_pipeline

ASSETS = pathlib.Path(__file__).resolve().parent.parent / "assets" / "pipelines"

TOY_FILES = sorted((ASSETS / "toys").glob("*.pl"))
TRAIN_FILES = sorted((ASSETS / "train").glob("*.pl"))
DEEP_FILE = ASSETS / "deep" / "p12_deep.pl"


def load(path: pathlib.Path):
    return parse_pipeline(path.read_text())


@pytest.fixture(scope="session")
def toys():
    return [load(f) for f in TOY_FILES]


@pytest.fixture(scope="session")
def train_pipes():
    return [load(f) for f in TRAIN_FILES]


@pytest.fixture(scope="session")
def deep_pipe():
    return load(DEEP_FILE)


@pytest.fixture(scope="session")
def t1(toys):
    return next(p for p in toys if p.name == "t1_scale")


@pytest.fixture(scope="session")
def t2(toys):
    return next(p for p in toys if p.name == "t2_stencil")


@pytest.fixture(scope="session")
def t3(toys):
    return next(p for p in toys if p.name == "t3_chain")


@pytest.fixture(scope="session")
def t4(toys):
    return next(p for p in toys if p.name == "t4_reduce")


@pytest.fixture(scope="session")
def t5(toys):
    return next(p for p in toys if p.name == "t5_diamond")
