import pytest

from nnasr.demo import write_demo


@pytest.fixture(scope="session")
def small_demo(tmp_path_factory):
    """Demo world with a 48-utterance, 4-speaker corpus; returns the config path."""
    root = tmp_path_factory.mktemp("demo")
    return write_demo(str(root), n_utts=48, n_speakers=4, seed=5)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)
