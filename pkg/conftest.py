import pytest


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False, help="run acceptance-scale tests")
    parser.addoption("--show-plots", action="store_true", default=False, help="display figures drawn by tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: multi-seed / timing experiments, skipped without --run-slow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def show_plots(request):
    return request.config.getoption("--show-plots")
