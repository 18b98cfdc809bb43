import pytest

from perfspde.config import parse_config


@pytest.fixture
def make_config():
    """Config from ``section.key=value`` keyword pairs on top of the defaults."""

    def build(**dotted):
        return parse_config("").replace(**{k.replace("__", "."): v for k, v in dotted.items()})

    return build
