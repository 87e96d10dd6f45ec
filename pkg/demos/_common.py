"""Helpers shared by the demo scripts."""

import re

from nnxva.cli import shipped_config
from nnxva.config import parse_config_text


def config(name, **subs):
    """Load a shipped config, replacing whole `key = value` lines."""
    text = shipped_config(name).read_text()
    for key, value in subs.items():
        text, n = re.subn(rf"^{key}\s*=.*$", f"{key} = {value}", text, flags=re.M)
        if not n:
            raise KeyError(key)
    return parse_config_text(text, name)
