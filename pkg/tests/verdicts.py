"""Acceptance verdict lines, printed live and repeated in the terminal summary."""

LINES: list[str] = []


def record(capsys, number: int, title: str, ok: bool, detail: str, seconds: float) -> None:
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail} [{seconds:.1f} s]"
    LINES.append(line)
    with capsys.disabled():
        print("\n" + line)
