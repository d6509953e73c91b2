from __future__ import annotations

from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def corpus20_dir() -> Path:
    return FIXTURES / "corpus20"


@pytest.fixture(scope="session")
def e2e_dir() -> Path:
    return FIXTURES / "e2e"


@pytest.fixture
def e2e_config_factory(e2e_dir):
    """RunConfig factory for the 50-task end-to-end fixture."""
    from solrepair.harness import RunConfig

    def make(out_dir: str, **overrides) -> RunConfig:
        base = dict(
            task_file=str(e2e_dir / "tasks.jsonl"),
            out_dir=out_dir,
            source_root=str(e2e_dir / "sources"),
            context_budget=2048,
            counter="bytes4",
            mock_client=str(e2e_dir / "mock_client.json"),
            mock_executor=str(e2e_dir / "mock_executor.json"),
            executor="mock",
        )
        base.update(overrides)
        return RunConfig(**base)

    return make
