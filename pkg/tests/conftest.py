import pytest
import torch

from pestalk.synthdata import CorpusSpec, generate_corpus

torch.set_num_threads(1)

TINY_MODEL = {"width": 16, "heads": 2, "blocks": 1, "tcn_channels": 8, "voice_width": 16}


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    spec = CorpusSpec(speakers=2, emotions=2, clips_per_key=2, heldout_per_key=1, frame_range=(20, 30), seed=1)
    return generate_corpus(spec, tmp_path_factory.mktemp("toy"))


ACCEPTANCE = {}
ACCEPTANCE_DETAIL = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.split("::")[-1]
    if "test_acceptance.py" in report.nodeid and name.startswith("test_criterion_"):
        if report.when == "call" or report.outcome != "passed":
            number = int(name.split("_")[2])
            ACCEPTANCE[number] = (report.outcome, getattr(report, "duration", 0.0))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        outcome, duration = ACCEPTANCE[number]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        detail = ACCEPTANCE_DETAIL.get(number, "")
        terminalreporter.write_line(f"criterion {number}: {verdict} ({duration:.1f} s) {detail}".rstrip())
