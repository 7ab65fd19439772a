"""Subclass and verification prompt construction, response parsing, decision rule."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Sequence

from ..errors import VeriaError
from ..placement import SizePrior

RIDER_CATEGORIES = frozenset({"bicycle", "motorcycle"})
SEVERITIES = ("none", "minor", "medium", "severe")

# Hallucination guards on parsed dimensions.
MAX_RANGE_RATIO = 10.0
MAX_DIMENSION_M = 30.0


class UnknownCategory(VeriaError):
    """Category is not one of the configured augmentation classes."""


class MalformedResponse(VeriaError):
    """Provider response is missing required fields or uses an unknown vocabulary."""


class ImplausibleDimensions(VeriaError):
    """Parsed dimensions fail the sanity caps; the candidate is dropped and logged."""


def _load_template(name: str) -> str:
    return resources.files(__package__).joinpath("templates", name).read_text(encoding="utf-8")


_SUBCLASS_TEMPLATE = _load_template("subclass_v1.txt").strip()
_VERIFICATION_SECTIONS = [s.strip() for s in _load_template("verification_v1.txt").split("---")]
VERIFICATION_INTRO = _VERIFICATION_SECTIONS[0]
VERIFICATION_QUESTIONS = tuple(_VERIFICATION_SECTIONS[1:])
assert len(VERIFICATION_QUESTIONS) == 4


@dataclass(frozen=True)
class SubclassSpec:
    """One fine-grained subclass: conditioning text plus physical size priors."""

    category: str
    subclass_name: str
    description: str
    size_prior: SizePrior
    reference_product: str = ""
    rider_included: bool | None = None

    def __post_init__(self):
        if not self.description.strip():
            raise ValueError("subclass description must be non-empty")
        needs_rider = self.category in RIDER_CATEGORIES
        if needs_rider and self.rider_included is None:
            raise ValueError(f"rider_included required for category {self.category!r}")
        if not needs_rider and self.rider_included is not None:
            raise ValueError(f"rider_included not applicable to category {self.category!r}")


@dataclass(frozen=True)
class SemanticVerdict:
    q1_category_match: bool
    q2_scene_plausible: bool
    q3_artifact_severity: str
    q4_comment: str

    def __post_init__(self):
        if self.q3_artifact_severity not in SEVERITIES:
            raise ValueError(f"unknown severity {self.q3_artifact_severity!r}")


@dataclass(frozen=True)
class VerificationDecision:
    passed: bool
    fail_reason: str  # category | scale | artifact | none

    def __post_init__(self):
        if self.passed != (self.fail_reason == "none"):
            raise ValueError("passed must hold exactly when fail_reason is 'none'")


@dataclass(frozen=True)
class QAPair:
    question: str
    answer: str


@dataclass(frozen=True)
class VerificationTurn:
    question: str
    history: tuple[QAPair, ...] = ()
    images: tuple[str, ...] = ()


def build_subclass_prompt(category: str, configured_categories: Iterable[str]) -> str:
    """Render the subclass specification prompt for a configured category."""
    allowed = set(configured_categories)
    if category not in allowed:
        raise UnknownCategory(f"category {category!r} is not configured (have {sorted(allowed)})")
    return _SUBCLASS_TEMPLATE.replace("{TARGET_LABEL}", category)


def serialize_subclass_spec(spec: SubclassSpec) -> str:
    """Canonical text form of a subclass spec; parse_subclass_response inverts it."""
    p = spec.size_prior
    lines = [
        f"Category: {spec.category}",
        f"Subclass: {spec.subclass_name}",
        f"Description: {spec.description}",
        (
            f"Dimensions: length {p.length[0]:g}-{p.length[1]:g} m, "
            f"width {p.width[0]:g}-{p.width[1]:g} m, "
            f"height {p.height[0]:g}-{p.height[1]:g} m"
        ),
        f"Reference product: {spec.reference_product}",
    ]
    if spec.rider_included is not None:
        lines.append(f"Rider included: {'yes' if spec.rider_included else 'no'}")
    return "\n".join(lines)


_NUM = r"(\d+(?:\.\d+)?)"
_RANGE_SEP = r"(?:–|—|-|to)"


def _parse_dimension(text: str, axis: str) -> tuple[float, float] | None:
    pattern = rf"{axis}\s*[:=]?\s*(?:of\s+)?{_NUM}(?:\s*{_RANGE_SEP}\s*{_NUM})?\s*(?:m\b|meters?\b)?"
    m = re.search(pattern, text, flags=re.IGNORECASE)
    if m is None:
        return None
    lo = float(m.group(1))
    hi = float(m.group(2)) if m.group(2) is not None else lo
    return (lo, hi) if lo <= hi else (hi, lo)


def _labeled_line(text: str, label: str) -> str | None:
    m = re.search(rf"^{label}\s*:\s*(.+)$", text, flags=re.IGNORECASE | re.MULTILINE)
    return m.group(1).strip() if m else None


def _parse_rider(text: str) -> bool | None:
    labeled = _labeled_line(text, "Rider included")
    if labeled is not None:
        token = labeled.strip().lower().split()
        if token and token[0] in ("yes", "no"):
            return token[0] == "yes"
    lowered = text.lower()
    if re.search(r"\bwithout\s+(?:a\s+)?rider\b|\bno\s+rider\b", lowered):
        return False
    if re.search(r"\bwith\s+(?:a\s+)?(?:seated\s+)?rider\b", lowered):
        return True
    return None


def parse_subclass_response(text: str, category: str) -> SubclassSpec:
    """Parse a subclass-specification response into a structured spec.

    Accepts the canonical labeled-line form, a JSON object, or free text with
    recognizable dimension phrases ("4.5-6.0", "4.5 to 6.0", en/em dashes, or a
    single value taken as min=max).

    Raises:
        MalformedResponse: required fields missing.
        ImplausibleDimensions: any axis with max/min > 10 or max > 30 m, which
            signals provider hallucination.
    """
    text = text.strip()
    if not text:
        raise MalformedResponse("empty response")

    name: str | None = None
    description: str | None = None
    reference: str | None = None
    dims: dict[str, tuple[float, float] | None] = {}
    rider: bool | None = None

    parsed_json = None
    if text.startswith("{"):
        try:
            parsed_json = json.loads(text)
        except json.JSONDecodeError:
            parsed_json = None
    if isinstance(parsed_json, dict):
        name = parsed_json.get("subclass") or parsed_json.get("subclass_name")
        description = parsed_json.get("description")
        reference = parsed_json.get("reference_product", "")
        raw_dims = parsed_json.get("dimensions", {})
        for axis in ("length", "width", "height"):
            value = raw_dims.get(axis)
            if isinstance(value, (int, float)):
                dims[axis] = (float(value), float(value))
            elif isinstance(value, (list, tuple)) and len(value) == 2:
                dims[axis] = (float(value[0]), float(value[1]))
            elif isinstance(value, str):
                dims[axis] = _parse_dimension(f"{axis} {value}", axis)
            else:
                dims[axis] = None
        if "rider_included" in parsed_json:
            rider = bool(parsed_json["rider_included"])
    else:
        name = _labeled_line(text, "Subclass")
        description = _labeled_line(text, "Description")
        reference = _labeled_line(text, "Reference product") or ""
        for axis in ("length", "width", "height"):
            dims[axis] = _parse_dimension(text, axis)
        rider = _parse_rider(text)
        if description is None:
            # Free-form responses: treat the prose itself as the description.
            description = text if name is not None else None

    if not name:
        raise MalformedResponse("missing subclass name")
    if not description:
        raise MalformedResponse("missing description")
    missing = [axis for axis, bounds in dims.items() if bounds is None]
    if missing:
        raise MalformedResponse(f"missing dimensions: {', '.join(missing)}")

    for axis, (lo, hi) in dims.items():
        if lo <= 0:
            raise ImplausibleDimensions(f"{axis} min must be positive, got {lo}")
        if hi / lo > MAX_RANGE_RATIO:
            raise ImplausibleDimensions(f"{axis} range ratio {hi / lo:.1f} exceeds {MAX_RANGE_RATIO}")
        if hi > MAX_DIMENSION_M:
            raise ImplausibleDimensions(f"{axis} max {hi} m exceeds {MAX_DIMENSION_M} m")

    if category in RIDER_CATEGORIES and rider is None:
        # Undetectable rider phrasing defaults to the vehicle-only reading.
        rider = False
    if category not in RIDER_CATEGORIES:
        rider = None

    prior = SizePrior(length=dims["length"], width=dims["width"], height=dims["height"])
    return SubclassSpec(
        category=category,
        subclass_name=str(name),
        description=str(description),
        size_prior=prior,
        reference_product=str(reference or ""),
        rider_included=rider,
    )


def build_verification_turns(
    scene_marked_ref: str, crop_ref: str, answers: Sequence[str] = ()
) -> list[VerificationTurn]:
    """Build the four sequential verification turns.

    Turn k carries only question Qk plus the accumulated Q/A history; both image
    references are attached to turn 1. Answers collected so far (possibly empty)
    fill the history; unanswered slots stay as empty strings.
    """
    turns: list[VerificationTurn] = []
    history: list[QAPair] = []
    for k, question in enumerate(VERIFICATION_QUESTIONS):
        if k == 0:
            asked = f"{VERIFICATION_INTRO}\n\n{question}"
            images: tuple[str, ...] = (scene_marked_ref, crop_ref)
        else:
            asked = question
            images = ()
        turns.append(VerificationTurn(question=asked, history=tuple(history), images=images))
        answer = answers[k] if k < len(answers) else ""
        history.append(QAPair(question=asked, answer=answer))
    return turns


def normalize_yes_no(answer: str) -> bool:
    """Map a free-form yes/no answer to a boolean via its leading token."""
    token = answer.strip().lower().split()
    if not token:
        raise MalformedResponse("empty yes/no answer")
    word = token[0].strip(".,!:;")
    if word == "yes":
        return True
    if word == "no":
        return False
    raise MalformedResponse(f"expected yes/no, got {answer!r}")


def normalize_severity(answer: str) -> str:
    """Map a free-form severity answer to one of none/minor/medium/severe."""
    token = answer.strip().lower().split()
    if not token:
        raise MalformedResponse("empty severity answer")
    word = token[0].strip(".,!:;")
    if word in SEVERITIES:
        return word
    raise MalformedResponse(f"expected one of {SEVERITIES}, got {answer!r}")


def decide(verdict: SemanticVerdict) -> VerificationDecision:
    """Deterministic pass rule: Q1 yes, Q2 yes, Q3 none; first failure names the reason."""
    if not verdict.q1_category_match:
        return VerificationDecision(passed=False, fail_reason="category")
    if not verdict.q2_scene_plausible:
        return VerificationDecision(passed=False, fail_reason="scale")
    if verdict.q3_artifact_severity != "none":
        return VerificationDecision(passed=False, fail_reason="artifact")
    return VerificationDecision(passed=True, fail_reason="none")
