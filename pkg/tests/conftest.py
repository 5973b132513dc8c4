import pytest

from exitbench.costmodel import ModelSpec

_ACCEPTANCE_RESULTS: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and report.when == "call":
        name = report.nodeid.rsplit("::", 1)[-1]
        _ACCEPTANCE_RESULTS[name] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name in sorted(_ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"{_ACCEPTANCE_RESULTS[name]}  {name}")


@pytest.fixture(scope="session")
def bert_base_spec() -> ModelSpec:
    return ModelSpec(
        model_name="bert-base-geometry",
        hidden_size=768,
        num_layers=12,
        num_heads=12,
        ffn_size=3072,
        vocab_size=30522,
        max_positions=512,
        num_segment_types=2,
        num_labels=2,
    )


@pytest.fixture(scope="session")
def tiny_spec() -> ModelSpec:
    return ModelSpec(
        model_name="tiny",
        hidden_size=4,
        num_layers=3,
        num_heads=1,
        ffn_size=8,
        vocab_size=16,
        max_positions=8,
        num_segment_types=2,
        num_labels=2,
    )
