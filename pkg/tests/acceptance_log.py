"""Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""

LINES: dict[int, str] = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    LINES[criterion] = line
    print(line)
    return ok
