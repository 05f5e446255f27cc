"""Shared record of acceptance outcomes, printed after the test session."""

RESULTS = {}


def record(number: int, passed: bool, detail: str) -> None:
    RESULTS[number] = (bool(passed), detail)


def lines() -> list[str]:
    out = []
    for k in range(1, 12):
        if k in RESULTS:
            ok, detail = RESULTS[k]
            out.append(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            out.append(f"criterion {k:2d}: NOT RUN")
    return out
