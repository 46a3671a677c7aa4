"""Collects one PASS/FAIL line per acceptance criterion for the run summary."""
import sys

RESULTS = []


def record(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"ACCEPTANCE {number:>2} {'PASS' if ok else 'FAIL'}: {title} | {detail}"
    RESULTS.append((number, line))
    print(line, file=sys.stderr)
