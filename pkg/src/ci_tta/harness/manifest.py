"""Dataset manifests: CSV files of ``path,label`` rows, no header, UTF-8.

Relative paths are resolved against the manifest file's directory when
loading, so manifests can ship next to their images.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from ..errors import InvalidArgumentError


@dataclass(frozen=True)
class Manifest:
    """Ordered (path, label) pairs with unique paths and nonnegative labels."""

    entries: tuple[tuple[str, int], ...]

    def __post_init__(self) -> None:
        paths = [p for p, _ in self.entries]
        if len(set(paths)) != len(paths):
            raise InvalidArgumentError("manifest paths must be unique")
        for path, label in self.entries:
            if label < 0:
                raise InvalidArgumentError(f"label must be >= 0, got {label} for {path}")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def num_classes(self) -> int:
        return max((label for _, label in self.entries), default=-1) + 1


def load_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    base = path.parent
    entries: list[tuple[str, int]] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        img_path, sep, label = line.rpartition(",")
        if not sep or not img_path:
            raise InvalidArgumentError(f"{path}:{lineno}: expected 'path,label', got {line!r}")
        try:
            label_int = int(label)
        except ValueError as exc:
            raise InvalidArgumentError(f"{path}:{lineno}: bad label {label!r}") from exc
        resolved = img_path if Path(img_path).is_absolute() else str(base / img_path)
        entries.append((resolved, label_int))
    return Manifest(tuple(entries))


def save_manifest(path: str | Path, manifest: Manifest, relative_to: str | Path | None = None) -> None:
    lines = []
    for img_path, label in manifest.entries:
        if relative_to is not None:
            img_path = str(Path(img_path).relative_to(relative_to))
        lines.append(f"{img_path},{label}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
