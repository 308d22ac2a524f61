"""Shared test utilities."""

from spinlab.config import bundled_config, parse_config


def edited_config(name: str, **overrides):
    """Bundled config ``name`` with ``section__key=value`` overrides applied."""
    text = open(bundled_config(name)).read()
    return parse_config(edit_text(text, overrides), name)


def edit_text(text: str, overrides: dict) -> str:
    lines = text.splitlines()
    for full, value in overrides.items():
        section, key = full.split("__")
        out, in_section, done = [], False, False
        for line in lines:
            s = line.strip()
            if s.startswith("["):
                if in_section and not done:
                    out.append(f"{key} = {value}")
                    done = True
                in_section = s == f"[{section}]"
            elif in_section and s.split("=")[0].strip() == key:
                if value is not None:
                    out.append(f"{key} = {value}")
                done = True
                continue
            out.append(line)
        if not done and value is not None:
            if not in_section:
                out.append(f"[{section}]")
            out.append(f"{key} = {value}")
        lines = out
    return "\n".join(lines) + "\n"
