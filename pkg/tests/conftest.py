import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sasvkit.corpus import MicroCorpusSpec, generate_micro_corpus, load_manifest, load_trials  # noqa: E402


@pytest.fixture(scope="session")
def micro_corpus(tmp_path_factory):
    """Small synthetic corpus shared by the unit tests: (root, records, trials)."""
    root = tmp_path_factory.mktemp("micro")
    spec = MicroCorpusSpec(n_speakers=3, n_tts_systems=2, utts_per_cell=6, duration_s=1.0, seed=7)
    manifest, trials = generate_micro_corpus(spec, root)
    return root, load_manifest(manifest), load_trials(trials)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(acceptance.RESULTS):
        terminalreporter.write_line(acceptance.RESULTS[key])
