"""Figure-spec files: a flat key = value document, one figure per file.

Example::

    kind = convergence
    inputs = results/order2_cosine.csv
    labels = cosine sweep
    out = figures/order2_cosine.png
    slopes = 1, 2
    cost_panel = true

Unknown or duplicate keys are rejected so that typos fail loudly instead
of silently dropping styling.
"""

from dataclasses import dataclass, field
from pathlib import Path

from .errors import SpecError

KINDS = ("convergence", "stability", "problem_panel")

_REQUIRED = ("kind", "inputs", "out")
_OPTIONAL = ("labels", "slopes", "title", "cost_panel", "dpi")


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    inputs: tuple
    out: str
    labels: tuple = ()
    slopes: tuple = (1.0, 2.0)
    title: str = ""
    cost_panel: bool = False
    dpi: int = 150

    def validate(self) -> "FigureSpec":
        if self.kind not in KINDS:
            raise SpecError(
                f"kind must be one of {', '.join(KINDS)}; got {self.kind!r}")
        if not self.inputs:
            raise SpecError("inputs must name at least one CSV file")
        if self.kind != "convergence":
            if len(self.inputs) != 1:
                raise SpecError(
                    f"{self.kind} figures take exactly one input CSV, "
                    f"got {len(self.inputs)}")
            if self.cost_panel:
                raise SpecError("cost_panel only applies to convergence")
        if self.labels and len(self.labels) != len(self.inputs):
            raise SpecError(
                f"got {len(self.labels)} labels for {len(self.inputs)} inputs")
        if any(s <= 0 for s in self.slopes):
            raise SpecError(f"guide slopes must be positive, got {self.slopes}")
        if self.dpi < 10:
            raise SpecError(f"dpi must be at least 10, got {self.dpi}")
        if not self.out:
            raise SpecError("out must name the output image path")
        return self


def _parse_bool(key: str, raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise SpecError(f"{key} must be a boolean, got {raw!r}")


def _split_list(raw: str) -> tuple:
    parts = [p.strip() for p in raw.split(",")]
    return tuple(p for p in parts if p)


def parse_spec(text: str) -> FigureSpec:
    """Parse a figure-spec document; '#' starts a comment line."""
    seen = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise SpecError(
                f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if key in seen:
            raise SpecError(f"line {lineno}: duplicate key {key!r}")
        if key not in _REQUIRED and key not in _OPTIONAL:
            raise SpecError(f"line {lineno}: unknown key {key!r}")
        seen[key] = value
    for key in _REQUIRED:
        if key not in seen:
            raise SpecError(f"missing required key {key!r}")

    kwargs = {
        "kind": seen["kind"],
        "inputs": _split_list(seen["inputs"]),
        "out": seen["out"],
    }
    if "labels" in seen:
        kwargs["labels"] = _split_list(seen["labels"])
    if "slopes" in seen:
        try:
            kwargs["slopes"] = tuple(float(s) for s in _split_list(seen["slopes"]))
        except ValueError:
            raise SpecError(f"slopes must be numbers, got {seen['slopes']!r}")
    if "title" in seen:
        kwargs["title"] = seen["title"]
    if "cost_panel" in seen:
        kwargs["cost_panel"] = _parse_bool("cost_panel", seen["cost_panel"])
    if "dpi" in seen:
        try:
            kwargs["dpi"] = int(seen["dpi"])
        except ValueError:
            raise SpecError(f"dpi must be an integer, got {seen['dpi']!r}")
    return FigureSpec(**kwargs).validate()


def load_spec(path) -> FigureSpec:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise SpecError(f"cannot read figure spec {p}: {exc}")
    return parse_spec(text)
