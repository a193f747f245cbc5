"""Agent contracts for the three reasoning steps of the pipeline — ambiguity
detection, configuration, and candidate validation — with two interchangeable
backends:

* RuleBasedAgents: a deterministic keyword engine, fully offline and testable.
* RemoteAgents: an adapter for any chat-completions-compatible HTTP endpoint,
  carrying the packaged prompt templates and a loadable few-shot corpus.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import httpx
import numpy as np

from .assets import asset_text
from .config import (
    MIN_ANCHOR_SUITABILITY,
    OptimizationSpec,
    parse_spec,
    spec_to_dict,
    validate_spec,
)
from .objectives import (
    Evaluator,
    Objective,
    ObjectiveKind,
    ObjectParams,
    WidgetParams,
)
from .scene import Layout, Scene, Vec3, angular_diff

ENV_ENDPOINT = "AUTOOPT_LLM_ENDPOINT"
ENV_API_KEY = "AUTOOPT_LLM_API_KEY"
ENV_MODEL = "AUTOOPT_LLM_MODEL"
ENV_TIMEOUT = "AUTOOPT_LLM_TIMEOUT_S"

ANCHOR_PROXIMITY_DEGREES = 10.0
PROTECTED_SUITABILITY = 0.05


class AgentError(RuntimeError):
    """Raised when an agent backend fails (network, parse, invalid output)."""

    def __init__(self, message: str, status: Optional[int] = None):
        super().__init__(message)
        self.status = status


class Facet(str, Enum):
    WIDGETS = "widgets"
    INTERACTION = "interaction"
    PREFERENCE = "preference"


@dataclass(frozen=True)
class AgentContext:
    scene_summary: str
    widget_catalog: Tuple[Tuple[str, str], ...]  # (name, description)
    object_catalog: Tuple[Tuple[str, str], ...]  # (name, label)
    history: Tuple[str, ...]
    combined_instruction: str


@dataclass(frozen=True)
class AmbiguityOutcome:
    clear: bool
    combined_instruction: str = ""
    question: str = ""
    facet: Optional[Facet] = None

    def __post_init__(self):
        if not self.clear and not self.question:
            raise ValueError("ambiguous outcome requires a question")


@dataclass(frozen=True)
class ValidationChoice:
    index: int
    rationale: str


@dataclass(frozen=True)
class FewShotExample:
    instruction: str
    label: str  # "well-formed" | "ambiguous"

    def __post_init__(self):
        if self.label not in ("well-formed", "ambiguous"):
            raise ValueError(f"label must be well-formed or ambiguous, got {self.label!r}")


@dataclass(frozen=True)
class CandidateLayout:
    """One reduced Pareto candidate at the layout level."""

    layout: Layout
    objectives: Tuple[float, ...]
    violations: Tuple[float, float, float]
    feasible: bool


def load_fewshot(text: str) -> List[FewShotExample]:
    """Parse a line-delimited {"instruction", "label"} corpus."""
    out = []
    for i, line in enumerate(text.splitlines()):
        line = line.strip()
        if not line:
            continue
        try:
            doc = json.loads(line)
            out.append(FewShotExample(doc["instruction"], doc["label"]))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise AgentError(f"corpus line {i + 1}: {exc}") from exc
    return out


def build_context(scene: Scene, history: Sequence[str]) -> AgentContext:
    """Textual scene description standing in for screenshots at desk scale."""
    eye = scene.pose.eye_position
    lines = []
    for obj in scene.objects:
        c = obj.bounds.center
        ex, ey, ez = obj.bounds.extents
        side = "left of" if c.x < -0.05 else ("right of" if c.x > 0.05 else "in front of")
        lines.append(
            f"{obj.name} ({obj.label or 'physical object'}): {ex:.2f} x {ey:.2f} x {ez:.2f} m, "
            f"center {abs(c.z - eye.z):.2f} m ahead, {side} the user, "
            f"{c.y - eye.y:+.2f} m relative to eye level"
        )
    summary = "Physical surroundings: " + "; ".join(lines) if lines else "Empty room."
    combined = combine_instructions(history)
    return AgentContext(
        scene_summary=summary,
        widget_catalog=tuple((w.name, w.description) for w in scene.widgets),
        object_catalog=tuple((o.name, o.label) for o in scene.objects),
        history=tuple(history),
        combined_instruction=combined,
    )


def combine_instructions(history: Sequence[str]) -> str:
    """Arrival-ordered concatenation with sentence separators; idempotent."""
    parts = []
    for entry in history:
        entry = entry.strip()
        if not entry:
            continue
        if entry[-1] not in ".!?":
            entry += "."
        parts.append(entry)
    return " ".join(parts)


# ---------------------------------------------------------------------------
# Keyword tables (rule-based engine)

INTERACTION_VERBS = ("touch", "scroll", "type", "interact", "click", "drag")
VIEWING_VERBS = ("watch", "see", "read", "monitor")


def _verb_regex(verbs: Sequence[str]) -> re.Pattern:
    forms: List[str] = []
    for v in verbs:
        if v == "see":
            forms += ["see", "sees", "seeing", "saw"]
        elif v == "type":
            forms += ["type", "types", "typed", "typing"]
        elif v == "drag":
            forms += ["drag", "drags", "dragged", "dragging"]
        elif v.endswith(("ch", "sh")):
            forms += [v, v + "es", v + "ed", v + "ing"]
        else:
            forms += [v, v + "s", v + "ed", v + "ing"]
    return re.compile(r"\b(?:" + "|".join(forms) + r")\b")


INTERACTION_RE = _verb_regex(INTERACTION_VERBS)
VIEWING_RE = _verb_regex(VIEWING_VERBS)
ALIGNMENT_WORDS = ("align", "aligned", "alignment", "tidy", "organize", "organise", "organized")
GENERIC_WIDGET_NOUNS = (
    "widget", "widgets", "panel", "panels", "button", "buttons",
    "slider", "sliders", "menu", "menus", "everything",
)
PREFERENCE_WORDS = ALIGNMENT_WORDS + (
    "visible", "clean", "block", "obstruct", "occlude", "cover",
    "strain", "reach", "reachable", "comfortable", "eye level",
    "field of view", "mid-air", "midair", "next to", "near", "close to",
    "above", "below", "left", "right", "top", "bottom", "center", "front",
)
ANCHOR_PREPOSITION = re.compile(r"\b(?:on|onto|anchor(?:ed)?(?:\s+to)?|over)\b[\s\w]{0,20}$")
PROTECTION_PATTERN = re.compile(
    r"(?:\b(?:do\s*not|don'?t|never|avoid)\s+(?:block|obstruct|occlude|cover)(?:ing)?\b"
    r"|\bkeep\b[^.;!?]*?\b(?:visible|clean)\b"
    r"|\bnot\s+(?:be\s+)?(?:blocked|obstructed|occluded|covered)\b)"
)

QUESTION_TEMPLATES: Dict[Facet, Tuple[str, ...]] = {
    Facet.WIDGETS: (
        "Which of these widgets do you want to use: {catalog}?",
        "Which widgets should I include in the layout?",
        "Could you name the widgets from {catalog} that matter for this task?",
        "Should every available widget stay visible, or only some of them?",
    ),
    Facet.INTERACTION: (
        "How do you want to interact with {widget} — touch it directly or just view it?",
        "Will you be touching these widgets or only looking at them?",
        "Do you plan to scroll, type, or click on any of the widgets?",
    ),
    Facet.PREFERENCE: (
        "Any placement preferences — for example surfaces to keep visible or widgets to align?",
        "Where would you like the widgets placed, and is there anything I should avoid covering?",
        "Should the widgets sit near a particular object or at a comfortable height?",
    ),
}


def _name_variants(name: str) -> List[str]:
    spaced = re.sub(r"(?<=[a-z0-9])(?=[A-Z])", " ", name).lower()
    variants = {name.lower(), spaced, spaced.replace(" ", ""), name.lower().replace("_", " ")}
    return sorted(variants, key=len, reverse=True)


def _find_mentions(text: str, names: Sequence[str]) -> List[Tuple[int, str]]:
    """(position, canonical name) for every catalog-name mention, in order."""
    found: List[Tuple[int, str]] = []
    lowered = text.lower()
    for name in names:
        for variant in _name_variants(name):
            for m in re.finditer(rf"\b{re.escape(variant)}s?\b", lowered):
                found.append((m.start(), name))
    found.sort()
    deduped: List[Tuple[int, str]] = []
    for pos, name in found:
        if not any(n == name and abs(p - pos) < 2 for p, n in deduped):
            deduped.append((pos, name))
    return deduped


def _has_word(text: str, words: Sequence[str]) -> bool:
    lowered = text.lower()
    return any(re.search(rf"\b{re.escape(w)}\b", lowered) for w in words)


def _split_sentences(text: str) -> List[str]:
    return [s.strip() for s in re.split(r"[.;!?]+", text) if s.strip()]


class AgentBackend:
    """Shared contract for rule-based and remote agent implementations."""

    def detect_ambiguity(self, ctx: AgentContext) -> AmbiguityOutcome:
        raise NotImplementedError

    def configure(self, ctx: AgentContext, scene: Scene) -> OptimizationSpec:
        raise NotImplementedError

    def validate_candidates(
        self, ctx: AgentContext, scene: Scene, candidates: Sequence[CandidateLayout],
        spec: OptimizationSpec,
    ) -> ValidationChoice:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# Rule-based backend


class RuleBasedAgents(AgentBackend):
    """Deterministic keyword engine: a pure function of (context, scene)."""

    def __init__(self, seed: int = 42, candidate_count: int = 4):
        self.seed = seed
        self.candidate_count = candidate_count

    # -- ambiguity ---------------------------------------------------------

    def missing_facets(self, ctx: AgentContext) -> List[Facet]:
        text = ctx.combined_instruction
        missing = []
        catalog_names = [n for n, _ in ctx.widget_catalog]
        widgets_found = bool(_find_mentions(text, catalog_names)) or _has_word(
            text, GENERIC_WIDGET_NOUNS
        )
        if not widgets_found:
            missing.append(Facet.WIDGETS)
        lowered = text.lower()
        if not (INTERACTION_RE.search(lowered) or VIEWING_RE.search(lowered)):
            missing.append(Facet.INTERACTION)
        if not self._has_preference(ctx):
            missing.append(Facet.PREFERENCE)
        return missing

    def _has_preference(self, ctx: AgentContext) -> bool:
        text = ctx.combined_instruction
        if _has_word(text, PREFERENCE_WORDS):
            return True
        if PROTECTION_PATTERN.search(text.lower()):
            return True
        # anchor phrasing ("... on the desk") counts as a spatial preference
        object_names = [n for n, _ in ctx.object_catalog]
        for pos, _name in _find_mentions(text, object_names):
            if ANCHOR_PREPOSITION.search(text.lower()[max(0, pos - 24):pos]):
                return True
        return False

    def detect_ambiguity(self, ctx: AgentContext) -> AmbiguityOutcome:
        if not ctx.combined_instruction.strip():
            raise AgentError("current instruction is empty")
        missing = self.missing_facets(ctx)
        if not missing:
            return AmbiguityOutcome(clear=True, combined_instruction=ctx.combined_instruction)
        facet = missing[0]
        templates = QUESTION_TEMPLATES[facet]
        template = templates[(max(len(ctx.history), 1) - 1) % len(templates)]
        catalog = ", ".join(n for n, _ in ctx.widget_catalog) or "the available widgets"
        mentions = _find_mentions(ctx.combined_instruction, [n for n, _ in ctx.widget_catalog])
        widget = f"the {mentions[0][1]}" if mentions else "the widgets"
        question = template.replace("{catalog}", catalog).replace("{widget}", widget)
        return AmbiguityOutcome(clear=False, question=question, facet=facet)

    # -- configuration -----------------------------------------------------

    def configure(self, ctx: AgentContext, scene: Scene) -> OptimizationSpec:
        text = ctx.combined_instruction
        catalog_names = [w.name for w in scene.widgets]
        object_names = [o.name for o in scene.objects]
        mentioned = [name for _, name in _find_mentions(text, catalog_names)]
        enabled = sorted(set(mentioned))
        if not enabled:
            # facet-defaults path: nothing resolvable, enable the whole catalog
            enabled = sorted(catalog_names)

        p_obs: Dict[str, float] = {n: 0.5 for n in enabled}
        p_int: Dict[str, float] = {n: 0.1 for n in enabled}
        anchor_pairs: List[Tuple[str, str]] = []
        suitability: Dict[str, float] = {}
        active: Dict[ObjectiveKind, Objective] = {}
        active[ObjectiveKind.FIELD_OF_VIEW] = Objective(ObjectiveKind.FIELD_OF_VIEW)

        for sentence in _split_sentences(text):
            lowered = sentence.lower()
            in_sentence = [n for _, n in _find_mentions(sentence, catalog_names) if n in p_obs]
            objs_in_sentence = _find_mentions(sentence, object_names)
            if INTERACTION_RE.search(lowered):
                for n in in_sentence:
                    p_int[n] = 0.8
                active[ObjectiveKind.ARM_EXERTION] = Objective(ObjectiveKind.ARM_EXERTION)
            if VIEWING_RE.search(lowered):
                for n in in_sentence:
                    p_obs[n] = 0.8
                active[ObjectiveKind.NECK_STRAIN] = Objective(ObjectiveKind.NECK_STRAIN)
            if _has_word(sentence, ALIGNMENT_WORDS):
                active[ObjectiveKind.ALIGNMENT] = Objective(
                    ObjectiveKind.ALIGNMENT, x_tolerance=0.02, y_tolerance=0.02
                )
            # protection applies to the objects named with the phrase, i.e.
            # mentions inside or shortly after the matched span
            for match in PROTECTION_PATTERN.finditer(lowered):
                hit = False
                for pos, obj in objs_in_sentence:
                    if match.start() <= pos <= match.end() + 40:
                        suitability[obj] = PROTECTED_SUITABILITY
                        hit = True
                if hit:
                    active[ObjectiveKind.OVERLAY] = Objective(ObjectiveKind.OVERLAY)
            widget_mentions = _find_mentions(sentence, catalog_names)
            for pos, obj in objs_in_sentence:
                window = sentence.lower()[max(0, pos - 24):pos]
                if not ANCHOR_PREPOSITION.search(window):
                    continue
                before = [n for p, n in widget_mentions if p < pos and n in p_obs]
                if before:
                    anchor_pairs.append((before[-1], obj))

        # first mention wins, one anchored widget per object, and anchors onto
        # protected objects are dropped
        owners: Dict[str, str] = {}
        final_anchors: Dict[str, str] = {}
        for widget, obj in anchor_pairs:
            if widget in final_anchors or obj in owners:
                continue
            if suitability.get(obj, 1.0) < MIN_ANCHOR_SUITABILITY:
                continue
            owners[obj] = widget
            final_anchors[widget] = obj
        if final_anchors:
            active[ObjectiveKind.ANCHOR] = Objective(ObjectiveKind.ANCHOR)
        if len(active) < 2:
            active[ObjectiveKind.NECK_STRAIN] = Objective(ObjectiveKind.NECK_STRAIN)

        order = [
            ObjectiveKind.FIELD_OF_VIEW,
            ObjectiveKind.NECK_STRAIN,
            ObjectiveKind.ARM_EXERTION,
            ObjectiveKind.ALIGNMENT,
            ObjectiveKind.ANCHOR,
            ObjectiveKind.OVERLAY,
        ]
        widgets = {
            name: WidgetParams(
                interaction_probability=p_int.get(name, 0.1),
                observation_probability=p_obs.get(name, 0.5),
                anchor=final_anchors.get(name),
                enabled=name in p_obs,
            )
            for name in catalog_names
        }
        spec = OptimizationSpec(
            widgets=widgets,
            objects={n: ObjectParams(overlay_suitability=s) for n, s in sorted(suitability.items())},
            active_objectives=tuple(active[k] for k in order if k in active),
            candidate_count=self.candidate_count,
            seed=self.seed,
        )
        problems = validate_spec(spec, scene)
        if problems:  # pragma: no cover - the table above never emits these
            raise AgentError("rule-based configuration produced an invalid spec: " + "; ".join(problems))
        return spec

    # -- validation --------------------------------------------------------

    def validate_candidates(
        self,
        ctx: AgentContext,
        scene: Scene,
        candidates: Sequence[CandidateLayout],
        spec: OptimizationSpec,
    ) -> ValidationChoice:
        if not candidates:
            raise AgentError("no candidates to validate")
        evaluator = Evaluator(
            scene, spec.widgets, spec.objects, spec.active_objectives, spec.distance_threshold
        )
        eye = scene.pose.eye_position
        anchored = {
            n: p.anchor for n, p in sorted(spec.widgets.items()) if p.enabled and p.anchor
        }
        protected = [
            n for n, p in sorted(spec.objects.items())
            if p.overlay_suitability <= PROTECTED_SUITABILITY
        ]

        F = np.array([c.objectives for c in candidates], dtype=float)
        lo, hi = F.min(axis=0), F.max(axis=0)
        span = np.where(hi - lo > 1e-12, hi - lo, 1.0)
        soft = ((F - lo) / span).mean(axis=1)

        best: Optional[Tuple[int, float, int]] = None
        notes: List[str] = []
        for i, cand in enumerate(candidates):
            hard = 0
            for widget, obj in anchored.items():
                center = scene.object_by_name(obj).bounds.center
                angle = angular_diff(cand.layout.positions[widget], eye, _direction(eye, center))
                if angle > ANCHOR_PROXIMITY_DEGREES:
                    hard += 1
            for obj in protected:
                for widget in cand.layout.positions:
                    if evaluator.occluded_fraction(cand.layout, obj, widget) > 0.0:
                        hard += 1
                        break
            key = (hard, float(soft[i]), i)
            if best is None or key < best:
                best = key
                notes = []
                if anchored and hard == 0:
                    notes.append("anchored widgets stay close to their anchors")
                if protected and hard == 0:
                    notes.append("protected objects remain unobstructed")
        index = best[2]
        rationale = (
            f"candidate {index} has the lowest normalized objective mean"
            + (" and " + ", ".join(notes) if notes else "")
        )
        return ValidationChoice(index=index, rationale=rationale)


def _direction(origin: Vec3, target: Vec3) -> Vec3:
    v = target.to_array() - origin.to_array()
    return Vec3.from_array(v / np.linalg.norm(v))


def classify_corpus(
    examples: Sequence[FewShotExample],
    backend: AgentBackend,
    scene: Scene,
) -> Tuple[float, Dict[str, int]]:
    """Accuracy of clear/ambiguous verdicts against labels, with a confusion
    table keyed by '<label>-><verdict>'."""
    if not examples:
        raise AgentError("empty corpus")
    confusion = {
        "well-formed->clear": 0,
        "well-formed->ambiguous": 0,
        "ambiguous->clear": 0,
        "ambiguous->ambiguous": 0,
    }
    hits = 0
    for ex in examples:
        ctx = build_context(scene, [ex.instruction])
        outcome = backend.detect_ambiguity(ctx)
        verdict = "clear" if outcome.clear else "ambiguous"
        expected = "clear" if ex.label == "well-formed" else "ambiguous"
        confusion[f"{ex.label}->{verdict}"] += 1
        if verdict == expected:
            hits += 1
    return hits / len(examples), confusion


# ---------------------------------------------------------------------------
# Remote chat-model backend


@dataclass(frozen=True)
class RemoteConfig:
    endpoint: str
    api_key: str = ""
    model: str = "gpt-4o"
    timeout_s: float = 30.0

    @staticmethod
    def from_env() -> "RemoteConfig":
        endpoint = os.environ.get(ENV_ENDPOINT, "")
        if not endpoint:
            raise AgentError(f"{ENV_ENDPOINT} is not configured")
        return RemoteConfig(
            endpoint=endpoint,
            api_key=os.environ.get(ENV_API_KEY, ""),
            model=os.environ.get(ENV_MODEL, "gpt-4o"),
            timeout_s=float(os.environ.get(ENV_TIMEOUT, "30")),
        )


JSON_BLOCK = re.compile(r"\{.*\}", re.DOTALL)


class RemoteAgents(AgentBackend):
    """Adapter for a chat-completions-compatible endpoint.

    Each agent call renders the packaged prompt template, sends one blocking
    request, and parses the reply as JSON with a single retry; failures
    surface as AgentError rather than falling back silently.
    """

    def __init__(self, config: Optional[RemoteConfig] = None,
                 fewshot: Optional[Sequence[FewShotExample]] = None,
                 client: Optional[httpx.Client] = None):
        self.config = config or RemoteConfig.from_env()
        self.fewshot = list(fewshot) if fewshot is not None else load_fewshot(
            asset_text("fewshot_instructions.jsonl")
        )
        self._client = client or httpx.Client(timeout=self.config.timeout_s)

    def remote_complete(self, prompt: str, fragments: Sequence[str] = ()) -> str:
        messages = [{"role": "system", "content": frag} for frag in fragments]
        messages.append({"role": "user", "content": prompt})
        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        try:
            response = self._client.post(
                self.config.endpoint,
                json={"model": self.config.model, "messages": messages, "temperature": 0},
                headers=headers,
                timeout=self.config.timeout_s,
            )
        except httpx.TimeoutException as exc:
            raise AgentError(f"remote completion timed out after {self.config.timeout_s}s") from exc
        except httpx.HTTPError as exc:
            raise AgentError(f"remote completion failed: {exc}") from exc
        if response.status_code != 200:
            raise AgentError(
                f"remote endpoint returned HTTP {response.status_code}",
                status=response.status_code,
            )
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise AgentError(f"malformed completion payload: {exc}") from exc

    def _complete_json(self, prompt: str, fragments: Sequence[str] = ()) -> dict:
        last_error = None
        for attempt in range(2):
            text = self.remote_complete(prompt, fragments)
            match = JSON_BLOCK.search(text)
            if match:
                try:
                    return json.loads(match.group(0))
                except json.JSONDecodeError as exc:
                    last_error = exc
            prompt = prompt + "\n\nYour previous reply was not valid JSON. Reply with JSON only."
        raise AgentError(f"remote reply was not parseable JSON after retry: {last_error}")

    def _fewshot_block(self) -> str:
        clear = [e.instruction for e in self.fewshot if e.label == "well-formed"]
        vague = [e.instruction for e in self.fewshot if e.label == "ambiguous"]
        return (
            "instructions with information about the primary virtual widgets, "
            "interaction intention and user preference: " + " | ".join(clear) + "\n"
            "instructions with missing, ambiguous or irrelevant information: "
            + " | ".join(vague)
        )

    def detect_ambiguity(self, ctx: AgentContext) -> AmbiguityOutcome:
        prompt = asset_text("prompts/ambiguity_detection.txt").replace(
            "{user's instructions}", ctx.combined_instruction
        )
        prompt += (
            '\n\nReply with JSON: {"sufficient": true|false, "question": "one clarification '
            'question when insufficient", "facet": "widgets"|"interaction"|"preference"}'
        )
        doc = self._complete_json(prompt, fragments=(ctx.scene_summary, self._fewshot_block()))
        if doc.get("sufficient"):
            return AmbiguityOutcome(clear=True, combined_instruction=ctx.combined_instruction)
        question = doc.get("question") or "Could you describe the layout you want in more detail?"
        facet = doc.get("facet")
        return AmbiguityOutcome(
            clear=False,
            question=question,
            facet=Facet(facet) if facet in {f.value for f in Facet} else Facet.PREFERENCE,
        )

    def configure(self, ctx: AgentContext, scene: Scene) -> OptimizationSpec:
        widgets = ", ".join(w.name for w in scene.widgets)
        areas = ", ".join(o.name for o in scene.objects)
        prompt = (
            asset_text("prompts/configuration_objectives.txt")
            + "\n\n"
            + asset_text("prompts/configuration_parameters.txt")
        )
        prompt = (
            prompt.replace("{list of widgets}", widgets)
            .replace("{list of areas}", areas)
            .replace("{number of widgets}", str(len(scene.widgets)))
            .replace("{user's instructions}", ctx.combined_instruction)
        )
        prompt += (
            "\n\nReply with a JSON optimization spec: "
            '{"widgets": [{"name", "enabled", "interaction_probability", '
            '"observation_probability", "anchor"}], "objects": [{"name", '
            '"overlay_suitability"}], "objectives": [{"kind": "field_of_view"|"neck_strain"|'
            '"arm_exertion"|"alignment"|"anchor"|"overlay", "params": {}}], '
            '"candidate_count", "seed"}'
        )
        last_error: Optional[Exception] = None
        for attempt in range(2):
            doc = self._complete_json(prompt, fragments=(ctx.scene_summary,))
            try:
                spec = parse_spec(doc)
                problems = validate_spec(spec, scene)
                if problems:
                    raise AgentError("invalid spec from remote agent: " + "; ".join(problems))
                return spec
            except (AgentError, ValueError) as exc:
                last_error = exc
                prompt += f"\n\nThe previous spec was rejected: {exc}. Emit a corrected JSON spec."
        raise AgentError(f"remote configuration failed after retry: {last_error}")

    def validate_candidates(
        self,
        ctx: AgentContext,
        scene: Scene,
        candidates: Sequence[CandidateLayout],
        spec: OptimizationSpec,
    ) -> ValidationChoice:
        if not candidates:
            raise AgentError("no candidates to validate")
        descriptions = []
        for i, cand in enumerate(candidates):
            placements = "; ".join(
                f"{name} at ({p.x:.2f}, {p.y:.2f}, {p.z:.2f})"
                for name, p in sorted(cand.layout.positions.items())
            )
            descriptions.append(f"candidate {i}: {placements}")
        prompt = (
            asset_text("prompts/validation.txt")
            .replace("{list of areas}", ctx.scene_summary)
            .replace("{candidate layouts}", " | ".join(descriptions))
            .replace("{user's instructions}", ctx.combined_instruction)
        )
        prompt += '\n\nReply with JSON: {"choice": <candidate index>, "rationale": "why"}'
        doc = self._complete_json(prompt)
        try:
            index = int(doc["choice"])
        except (KeyError, TypeError, ValueError) as exc:
            raise AgentError(f"remote validation reply missing choice: {exc}") from exc
        if not 0 <= index < len(candidates):
            raise AgentError(f"remote validation chose out-of-range index {index}")
        return ValidationChoice(index=index, rationale=str(doc.get("rationale", "")))
