"""Merge diagnostics. Every merge produces a report; silent merging is not
allowed, since whitening instabilities only show up in the diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class TensorRecord:
    name: str
    method: str
    retained_rank: int = 0
    energy_captured: float = 1.0
    ortho_residual: float = 0.0
    s_star: int | None = None
    fallback_used: bool = False
    boost_ratio: float | None = None


@dataclass
class MergeReport:
    method: str
    per_tensor: list[TensorRecord] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    wall_time: float = 0.0  # in-memory only; excluded from serialization

    @property
    def tensor_count(self) -> int:
        return len(self.per_tensor)

    @property
    def fallback_count(self) -> int:
        return sum(1 for r in self.per_tensor if r.fallback_used)

    def to_text(self) -> str:
        """Line-oriented serialization, deterministic for identical merges."""
        lines = [
            f"method={self.method} tensors={self.tensor_count} "
            f"fallbacks={self.fallback_count} warnings={len(self.warnings)}"
        ]
        for w in self.warnings:
            lines.append(f"warning={w}")
        for r in sorted(self.per_tensor, key=lambda r: r.name):
            s_star = "-" if r.s_star is None else str(r.s_star)
            boost = "-" if r.boost_ratio is None else f"{r.boost_ratio:.6f}"
            lines.append(
                f"tensor name={r.name} method={r.method} retained_rank={r.retained_rank} "
                f"energy={r.energy_captured:.6f} ortho_residual={r.ortho_residual:.3e} "
                f"s_star={s_star} fallback={int(r.fallback_used)} boost_ratio={boost}"
            )
        return "\n".join(lines) + "\n"


def write_report(report: MergeReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(report.to_text())
