import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make tests/util.py importable

from tempcompose.kdindex import IndexedTempCPNet
from tempcompose.modelfile import load_tempcp_path
from tempcompose.workload import GenAttribute

ROOT = Path(__file__).resolve().parent.parent
MODELS = ROOT / "models"

GEN_ATTRS = (
    GenAttribute("A", 90, 100, "max"),
    GenAttribute("C", 4, 14, "sum"),
    GenAttribute("P", 40, 200, "sum", temporal=True),
)


@pytest.fixture(scope="session")
def figure_net():
    return load_tempcp_path(MODELS / "figure_provider.tempcp")


@pytest.fixture(scope="session")
def figure_inet(figure_net):
    return IndexedTempCPNet(figure_net)


@pytest.fixture(scope="session")
def monthly_net():
    return load_tempcp_path(MODELS / "provider_monthly.tempcp")


@pytest.fixture(scope="session")
def monthly_inet(monthly_net):
    return IndexedTempCPNet(monthly_net)


@pytest.fixture(scope="session")
def quarterly_net():
    return load_tempcp_path(MODELS / "provider_quarterly.tempcp")


@pytest.fixture(scope="session")
def quarterly_inet(quarterly_net):
    return IndexedTempCPNet(quarterly_net)
