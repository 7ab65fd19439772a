"""Stage-wise yield decomposition, lambda sweeps, and run reports from candidate logs."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Iterable, Iterator, Sequence

from .errors import VeriaError
from .geoverify import GeoVerdict
from .prompts import SemanticVerdict, VerificationDecision

SCHEMA_ID = "veria.candidate.v1"

STATUSES = ("pass", "fail_semantic", "fail_geometric", "provider_error")


class EmptyLog(VeriaError):
    """No candidate records to aggregate."""


class MissingRatios(VeriaError):
    """Legacy record lacks raw size ratios; lambda sweep cannot be recomputed."""


@dataclass(frozen=True)
class CandidateRecord:
    """Full provenance of one synthesized candidate."""

    candidate_id: str
    category: str
    subclass: str
    box7: tuple[float, ...]
    semantic: SemanticVerdict | None
    decision: VerificationDecision | None
    geometric: GeoVerdict | None
    point_count: int
    timings: dict[str, float]
    status: str

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")
        sem_ok = self.decision is not None and self.decision.passed
        geo_ok = self.geometric is not None and self.geometric.passed
        if (self.status == "pass") != (sem_ok and geo_ok):
            raise ValueError("status 'pass' must match semantic and geometric passes")
        if any(t < 0 for t in self.timings.values()):
            raise ValueError("timings must be non-negative")

    @property
    def sem_passed(self) -> bool:
        return self.decision is not None and self.decision.passed

    @property
    def geo_passed(self) -> bool:
        return self.geometric is not None and self.geometric.passed

    def to_json(self) -> dict:
        sem = None
        if self.semantic is not None:
            sem = {
                "q1": "yes" if self.semantic.q1_category_match else "no",
                "q2": "yes" if self.semantic.q2_scene_plausible else "no",
                "q3": self.semantic.q3_artifact_severity,
                "q4": self.semantic.q4_comment,
            }
        dec = None
        if self.decision is not None:
            dec = {"passed": self.decision.passed, "fail_reason": self.decision.fail_reason}
        geo = None
        if self.geometric is not None:
            geo = {
                "passed": self.geometric.passed,
                "fitted_sizes": list(self.geometric.fitted_sizes)
                if self.geometric.fitted_sizes is not None
                else None,
                "size_ratios": list(self.geometric.size_ratios)
                if self.geometric.size_ratios is not None
                else None,
                "point_count": self.geometric.point_count,
                "fail_reason": self.geometric.fail_reason,
            }
        return {
            "candidate_id": self.candidate_id,
            "category": self.category,
            "subclass": self.subclass,
            "box7": list(self.box7),
            "semantic": sem,
            "decision": dec,
            "geometric": geo,
            "point_count": self.point_count,
            "timings": dict(sorted(self.timings.items())),
            "status": self.status,
        }

    @staticmethod
    def from_json(payload: dict) -> "CandidateRecord":
        sem = None
        if payload.get("semantic") is not None:
            s = payload["semantic"]
            sem = SemanticVerdict(
                q1_category_match=s["q1"] == "yes",
                q2_scene_plausible=s["q2"] == "yes",
                q3_artifact_severity=s["q3"],
                q4_comment=s["q4"],
            )
        dec = None
        if payload.get("decision") is not None:
            d = payload["decision"]
            dec = VerificationDecision(passed=d["passed"], fail_reason=d["fail_reason"])
        geo = None
        if payload.get("geometric") is not None:
            g = payload["geometric"]
            geo = GeoVerdict(
                passed=g["passed"],
                fitted_sizes=tuple(g["fitted_sizes"]) if g.get("fitted_sizes") else None,
                size_ratios=tuple(g["size_ratios"]) if g.get("size_ratios") else None,
                point_count=g["point_count"],
                fail_reason=g["fail_reason"],
            )
        return CandidateRecord(
            candidate_id=payload["candidate_id"],
            category=payload["category"],
            subclass=payload.get("subclass", ""),
            box7=tuple(payload["box7"]),
            semantic=sem,
            decision=dec,
            geometric=geo,
            point_count=int(payload["point_count"]),
            timings={k: float(v) for k, v in payload.get("timings", {}).items()},
            status=payload["status"],
        )


def round2(numerator: int, denominator: int) -> float:
    """Exact percentage rounded half-to-even at 2 decimals."""
    value = Decimal(100 * numerator) / Decimal(denominator)
    return float(value.quantize(Decimal("0.01"), rounding=ROUND_HALF_EVEN))


@dataclass
class YieldCounts:
    n: int = 0
    sem: int = 0
    geo: int = 0
    joint: int = 0
    provider_errors: int = 0
    geo_evaluated: int = 0  # candidates whose reconstruction actually ran

    def add(self, record: CandidateRecord) -> None:
        self.n += 1
        if record.status == "provider_error":
            self.provider_errors += 1
            return
        if record.sem_passed:
            self.sem += 1
        if record.geometric is not None:
            self.geo_evaluated += 1
        if record.geo_passed:
            self.geo += 1
        if record.sem_passed and record.geo_passed:
            self.joint += 1

    def merge(self, other: "YieldCounts") -> "YieldCounts":
        return YieldCounts(
            n=self.n + other.n,
            sem=self.sem + other.sem,
            geo=self.geo + other.geo,
            joint=self.joint + other.joint,
            provider_errors=self.provider_errors + other.provider_errors,
            geo_evaluated=self.geo_evaluated + other.geo_evaluated,
        )


@dataclass
class YieldReport:
    """Stage-wise yields over the same N candidates, percentages at 2 decimals.

    Fail-reason keys are prefixed by stage ("sem:category", "geo:size_x", ...).
    The Frechet-bound invariant is checked on the exact counts, since rounding
    each percentage independently can nudge a boundary case by up to 0.01.
    """

    counts: YieldCounts
    per_category: dict[str, YieldCounts] = field(default_factory=dict)
    fail_reasons: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        c = self.counts
        if not (max(0, c.sem + c.geo - c.n) <= c.joint <= min(c.sem, c.geo)):
            raise ValueError("joint count violates the Frechet bounds")

    @property
    def n(self) -> int:
        return self.counts.n

    @property
    def p_sem(self) -> float:
        return round2(self.counts.sem, self.counts.n)

    @property
    def p_geo(self) -> float:
        return round2(self.counts.geo, self.counts.n)

    @property
    def p_joint(self) -> float:
        return round2(self.counts.joint, self.counts.n)

    @property
    def geo_is_conditional(self) -> bool:
        """True when geometric verification was skipped for some candidates
        (runs without full marginals), so P(S_geo) is only measurable
        conditionally on the candidates that were reconstructed."""
        c = self.counts
        return c.geo_evaluated < c.n - c.provider_errors

    @property
    def p_geo_conditional(self) -> float:
        if self.counts.geo_evaluated == 0:
            return 0.0
        return round2(self.counts.geo, self.counts.geo_evaluated)


def yield_decomposition(records: Iterable[CandidateRecord]) -> YieldReport:
    """Single-pass exact counting of semantic, geometric, and joint pass events.

    provider_error records count in N but in neither pass event.
    """
    counts = YieldCounts()
    per_category: dict[str, YieldCounts] = {}
    fail_reasons: dict[str, int] = {}
    for record in records:
        counts.add(record)
        per_category.setdefault(record.category, YieldCounts()).add(record)
        if record.status == "provider_error":
            fail_reasons["provider_error"] = fail_reasons.get("provider_error", 0) + 1
            continue
        if record.decision is not None and not record.decision.passed:
            key = f"sem:{record.decision.fail_reason}"
            fail_reasons[key] = fail_reasons.get(key, 0) + 1
        if record.geometric is not None and not record.geometric.passed:
            key = f"geo:{record.geometric.fail_reason}"
            fail_reasons[key] = fail_reasons.get(key, 0) + 1
    if counts.n == 0:
        raise EmptyLog("no candidate records")
    return YieldReport(counts=counts, per_category=per_category, fail_reasons=fail_reasons)


def merge_reports(a: YieldReport, b: YieldReport) -> YieldReport:
    per_category = dict(a.per_category)
    for category, counts in b.per_category.items():
        per_category[category] = per_category.get(category, YieldCounts()).merge(counts)
    fail_reasons = dict(a.fail_reasons)
    for key, value in b.fail_reasons.items():
        fail_reasons[key] = fail_reasons.get(key, 0) + value
    return YieldReport(
        counts=a.counts.merge(b.counts), per_category=per_category, fail_reasons=fail_reasons
    )


def geo_pass_at(record: CandidateRecord, lam: float, p_n: int) -> bool:
    """Recompute the geometric verdict at tolerance lam from stored raw ratios.

    Point-count failures stay failures at every lambda. Raises MissingRatios for
    records that would need ratios but predate their logging.
    """
    if record.status == "provider_error" or record.geometric is None:
        return False
    if record.geometric.point_count < p_n:
        return False
    ratios = record.geometric.size_ratios
    if ratios is None:
        raise MissingRatios(f"record {record.candidate_id} lacks raw size ratios")
    return all(1.0 - lam <= r <= 1.0 + lam for r in ratios)


def lambda_sweep(
    records: Sequence[CandidateRecord], lambda_grid: Iterable[float], p_n: int = 5
) -> list[tuple[float, float]]:
    """Joint yield percentage at each tolerance, recomputed from logged ratios."""
    records = list(records)
    if not records:
        raise EmptyLog("no candidate records")
    out = []
    for lam in sorted(lambda_grid):
        joint = sum(1 for r in records if r.sem_passed and geo_pass_at(r, lam, p_n))
        out.append((lam, round2(joint, len(records))))
    return out


def _timing_means(records: Sequence[CandidateRecord]) -> dict[str, float]:
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for record in records:
        for stage, seconds in record.timings.items():
            sums[stage] = sums.get(stage, 0.0) + seconds
            counts[stage] = counts.get(stage, 0) + 1
    return {stage: sums[stage] / counts[stage] for stage in sorted(sums)}


def report(
    records: Sequence[CandidateRecord],
    fmt: str = "markdown",
    lambda_grid: Sequence[float] = (0.1, 0.25, 0.5, 0.75, 1.0),
    p_n: int = 5,
) -> str:
    """Render the yield report, per-stage timing means, fail-reason histogram,
    and the lambda-sweep table. Deterministic for a given log."""
    records = list(records)
    decomposition = yield_decomposition(records)
    sweep = lambda_sweep(records, lambda_grid, p_n=p_n)
    timings = _timing_means(records)

    if fmt == "csv":
        lines = ["section,key,value"]
        lines.append(f"yield,n,{decomposition.n}")
        lines.append(f"yield,p_sem,{decomposition.p_sem:.2f}")
        if decomposition.geo_is_conditional:
            lines.append(f"yield,p_geo_given_sem,{decomposition.p_geo_conditional:.2f}")
        else:
            lines.append(f"yield,p_geo,{decomposition.p_geo:.2f}")
        lines.append(f"yield,p_joint,{decomposition.p_joint:.2f}")
        for category in sorted(decomposition.per_category):
            c = decomposition.per_category[category]
            lines.append(f"category,{category},{round2(c.joint, c.n):.2f}")
        for reason in sorted(decomposition.fail_reasons):
            lines.append(f"fail_reason,{reason},{decomposition.fail_reasons[reason]}")
        for stage, mean in timings.items():
            lines.append(f"timing_mean_s,{stage},{mean:.4f}")
        for lam, value in sweep:
            lines.append(f"lambda_sweep,{lam:g},{value:.2f}")
        return "\n".join(lines) + "\n"
    if fmt != "markdown":
        raise ValueError(f"unknown report format {fmt!r}")

    lines = ["# Pipeline yield report", ""]
    lines.append(f"Candidates (N): {decomposition.n}")
    lines.append("")
    lines.append("| metric | % |")
    lines.append("| --- | --- |")
    lines.append(f"| P(S_sem) | {decomposition.p_sem:.2f} |")
    if decomposition.geo_is_conditional:
        lines.append(f"| P(S_geo given S_sem) (conditional) | {decomposition.p_geo_conditional:.2f} |")
    else:
        lines.append(f"| P(S_geo) | {decomposition.p_geo:.2f} |")
    lines.append(f"| P(S_sem and S_geo) | {decomposition.p_joint:.2f} |")
    lines.append("")
    if decomposition.geo_is_conditional:
        lines.append(
            "Geometric verification ran only on semantically passed candidates; "
            "P(S_geo) is reported conditionally on that set."
        )
        lines.append("")
    if decomposition.per_category:
        lines.append("## Per-category joint yield")
        lines.append("")
        lines.append("| category | n | joint % |")
        lines.append("| --- | --- | --- |")
        for category in sorted(decomposition.per_category):
            c = decomposition.per_category[category]
            lines.append(f"| {category} | {c.n} | {round2(c.joint, c.n):.2f} |")
        lines.append("")
    if decomposition.fail_reasons:
        lines.append("## Fail reasons")
        lines.append("")
        lines.append("| reason | count |")
        lines.append("| --- | --- |")
        for reason in sorted(decomposition.fail_reasons):
            lines.append(f"| {reason} | {decomposition.fail_reasons[reason]} |")
        lines.append("")
    if timings:
        lines.append("## Mean per-call time (s)")
        lines.append("")
        lines.append("| stage | mean s |")
        lines.append("| --- | --- |")
        for stage, mean in timings.items():
            lines.append(f"| {stage} | {mean:.4f} |")
        lines.append("")
    lines.append("## Joint yield vs lambda")
    lines.append("")
    lines.append("| lambda | joint % |")
    lines.append("| --- | --- |")
    for lam, value in sweep:
        lines.append(f"| {lam:g} | {value:.2f} |")
    lines.append("")
    return "\n".join(lines)


def sweep_svg(sweep: Sequence[tuple[float, float]], width: int = 480, height: int = 320) -> str:
    """Minimal deterministic SVG line plot of a lambda sweep."""
    if not sweep:
        raise EmptyLog("nothing to plot")
    pad = 40
    xs = [lam for lam, _ in sweep]
    ys = [value for _, value in sweep]
    x_lo, x_hi = min(xs), max(xs)
    x_span = (x_hi - x_lo) or 1.0

    def sx(x: float) -> float:
        return pad + (x - x_lo) / x_span * (width - 2 * pad)

    def sy(y: float) -> float:
        return height - pad - y / 100.0 * (height - 2 * pad)

    points = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<polyline points="{points}" fill="none" stroke="#1f77b4" stroke-width="2"/>',
        f'<text x="{width / 2:.0f}" y="{height - 8}" text-anchor="middle" font-size="12">lambda</text>',
        f'<text x="12" y="{height / 2:.0f}" font-size="12" transform="rotate(-90 12 {height / 2:.0f})">joint yield %</text>',
    ]
    for x, y in zip(xs, ys):
        parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" fill="#1f77b4"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_records(path, records: Iterable[CandidateRecord]) -> None:
    """Write a schema-headed JSON Lines candidate log."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"schema": SCHEMA_ID}, sort_keys=True) + "\n")
        for record in records:
            f.write(json.dumps(record.to_json(), sort_keys=True) + "\n")


def read_records(path) -> Iterator[CandidateRecord]:
    """Stream records from a JSON Lines log, validating the schema header."""
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline()
        if not header:
            raise EmptyLog(f"{path} is empty")
        head = json.loads(header)
        if head.get("schema") != SCHEMA_ID:
            raise ValueError(f"unsupported log schema {head.get('schema')!r}")
        for line in f:
            line = line.strip()
            if line:
                yield CandidateRecord.from_json(json.loads(line))
