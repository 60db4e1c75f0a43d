import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from synth import PAPER_SPAN, write_source_files  # noqa: E402


@pytest.fixture(scope="session")
def paper_span_files(tmp_path_factory):
    """Raw CSVs spanning the full study window (shared; expensive to write)."""
    out = tmp_path_factory.mktemp("paper_span")
    return write_source_files(out, span=PAPER_SPAN), PAPER_SPAN
