from dataclasses import dataclass
from pathlib import Path

from esgrisk.utils.settings_tools import RunConfig


@dataclass(frozen=True)
class RunContext:
    """Validated settings and run flags handed to every command."""

    settings: RunConfig
    dry_run: bool = False
    progress: bool = True

    @property
    def out(self) -> Path:
        return self.settings.io.out
