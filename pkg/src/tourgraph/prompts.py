from __future__ import annotations

from functools import lru_cache
from importlib import resources

from .errors import InvalidArgument


@lru_cache(maxsize=None)
def load_template(template_id: str) -> str:
    try:
        return resources.files("tourgraph.templates").joinpath(f"{template_id}.txt").read_text(
            encoding="utf-8"
        )
    except (FileNotFoundError, OSError):
        raise InvalidArgument(f"unknown prompt template {template_id!r}") from None


def render(template: str, **values: object) -> str:
    # plain substitution: templates embed JSON, so str.format() braces are off the table
    out = template
    for name, value in values.items():
        out = out.replace("{" + name + "}", str(value))
    return out
