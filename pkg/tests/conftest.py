import pathlib

import pytest

from ilysa import parse_system, solve

CORPUS = pathlib.Path(__file__).resolve().parent.parent / "corpus"

CORPUS_FILES = [
    "ping.ilysa",
    "race.ilysa",
    "feedback.ilysa",
    "enc_relay.ilysa",
    "street_light.ilysa",
    "street_light_enc.ilysa",
    "street_light_noturnoff.ilysa",
]

SMALL_CORPUS = ["ping.ilysa", "race.ilysa", "feedback.ilysa", "enc_relay.ilysa"]


def corpus_text(name: str) -> str:
    return (CORPUS / name).read_text(encoding="utf-8")


def load(name: str):
    return parse_system(corpus_text(name))


@pytest.fixture(scope="session")
def street():
    return load("street_light.ilysa")


@pytest.fixture(scope="session")
def street_enc():
    return load("street_light_enc.ilysa")


@pytest.fixture(scope="session")
def street_noturnoff():
    return load("street_light_noturnoff.ilysa")


@pytest.fixture(scope="session")
def ping():
    return load("ping.ilysa")


@pytest.fixture(scope="session")
def race():
    return load("race.ilysa")


@pytest.fixture(scope="session")
def feedback():
    return load("feedback.ilysa")


@pytest.fixture(scope="session")
def enc_relay():
    return load("enc_relay.ilysa")


@pytest.fixture(scope="session")
def est_street(street):
    return solve(street)


@pytest.fixture(scope="session")
def est_street_enc(street_enc):
    return solve(street_enc)
