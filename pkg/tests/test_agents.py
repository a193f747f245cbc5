import json

import httpx
import pytest

from autoopt.agents import (
    AgentContext,
    AgentError,
    AmbiguityOutcome,
    CandidateLayout,
    Facet,
    FewShotExample,
    RemoteAgents,
    RemoteConfig,
    RuleBasedAgents,
    build_context,
    classify_corpus,
    combine_instructions,
    load_fewshot,
)
from autoopt.assets import asset_text, load_asset_json
from autoopt.config import OptimizationSpec, validate_spec
from autoopt.objectives import Objective, ObjectiveKind, ObjectParams, WidgetParams
from autoopt.scene import Layout, Vec3, load_scene

WELL_FORMED = (
    "I need a virtual control panel with sliders for adjusting volume and brightness, "
    "which should be interactive through direct touch. The panel should be aligned to "
    "the bottom-right of the field of view, considering minimal strain."
)


@pytest.fixture
def office():
    return load_scene(load_asset_json("office.json"))


@pytest.fixture
def living():
    return load_scene(
        {
            "id": "living",
            "pose": {"eye": [0, 1.2, 0], "gaze": [0, 0, -1], "shoulder": [0, 1.0, 0]},
            "search_bounds": {"min": [-1.2, 0.4, -1.4], "max": [1.2, 2.0, -0.1]},
            "objects": [
                {"name": "tv", "min": [-0.6, 1.0, -1.4], "max": [0.6, 1.7, -1.32], "label": "wall tv"},
                {"name": "desk", "min": [-0.6, 0.7, -0.9], "max": [0.6, 0.74, -0.3], "label": "table"},
            ],
            "widgets": [
                {"name": "Map", "width": 0.3, "height": 0.2},
                {"name": "FlightBooking", "width": 0.25, "height": 0.18},
                {"name": "Calculator", "width": 0.15, "height": 0.2},
                {"name": "Spotify", "width": 0.15, "height": 0.15},
            ],
        }
    )


class TestDetectAmbiguity:
    def test_vague_instruction_is_ambiguous(self, office):
        agents = RuleBasedAgents()
        ctx = build_context(office, ["I want an interface that works well."])
        outcome = agents.detect_ambiguity(ctx)
        assert not outcome.clear
        assert outcome.question

    def test_complete_instruction_is_clear(self, office):
        agents = RuleBasedAgents()
        ctx = build_context(office, [WELL_FORMED])
        outcome = agents.detect_ambiguity(ctx)
        assert outcome.clear
        assert outcome.combined_instruction == ctx.combined_instruction

    def test_place_the_map_missing_interaction(self, office):
        agents = RuleBasedAgents()
        ctx = build_context(office, ["Place the map."])
        outcome = agents.detect_ambiguity(ctx)
        assert not outcome.clear
        assert outcome.facet is Facet.INTERACTION

    def test_question_targets_lowest_missing_facet(self, office):
        agents = RuleBasedAgents()
        ctx = build_context(office, ["Hello."])
        outcome = agents.detect_ambiguity(ctx)
        assert outcome.facet is Facet.WIDGETS

    def test_question_rotates_across_rounds(self, office):
        agents = RuleBasedAgents()
        q1 = agents.detect_ambiguity(build_context(office, ["Hello."])).question
        q2 = agents.detect_ambiguity(build_context(office, ["Hello.", "Hi again."])).question
        assert q1 != q2

    def test_pure_function_of_inputs(self, office):
        agents = RuleBasedAgents()
        ctx = build_context(office, ["Place the map."])
        assert agents.detect_ambiguity(ctx) == agents.detect_ambiguity(ctx)

    def test_empty_instruction_rejected(self, office):
        agents = RuleBasedAgents()
        ctx = build_context(office, [""])
        with pytest.raises(AgentError):
            agents.detect_ambiguity(ctx)


class TestConfigure:
    def test_living_room_mapping(self, living):
        agents = RuleBasedAgents()
        instruction = (
            "Place the map on the tv and put the flight booking and calculator "
            "on the desk so I can interact with it."
        )
        spec = agents.configure(build_context(living, [instruction]), living)
        assert spec.enabled_widgets() == ["Calculator", "FlightBooking", "Map"]
        assert spec.widgets["Map"].anchor == "tv"
        assert spec.widgets["FlightBooking"].interaction_probability >= 0.7
        assert spec.widgets["Calculator"].interaction_probability >= 0.7
        kinds = spec.objective_kinds()
        assert ObjectiveKind.ANCHOR in kinds
        assert ObjectiveKind.ARM_EXERTION in kinds
        assert not spec.widgets["Spotify"].enabled

    def test_protection_lowers_suitability_and_enables_overlay(self, living):
        agents = RuleBasedAgents()
        instruction = "I will read the map, and do not block the tv."
        spec = agents.configure(build_context(living, [instruction]), living)
        assert spec.objects["tv"].overlay_suitability <= 0.1
        assert ObjectiveKind.OVERLAY in spec.objective_kinds()

    def test_keep_clean_variant(self, office):
        agents = RuleBasedAgents()
        instruction = "I want to read the Email; keep my monitor clean."
        spec = agents.configure(build_context(office, [instruction]), office)
        assert spec.objects["monitor"].overlay_suitability <= 0.1
        assert ObjectiveKind.OVERLAY in spec.objective_kinds()

    def test_unmentioned_widgets_disabled(self, office):
        agents = RuleBasedAgents()
        spec = agents.configure(
            build_context(office, ["I will watch the Calendar at eye level."]), office
        )
        assert spec.enabled_widgets() == ["Calendar"]
        disabled = [n for n, p in spec.widgets.items() if not p.enabled]
        assert sorted(disabled) == ["Email", "Map", "Messenger", "MusicPlayer"]

    def test_viewing_verbs_raise_observation(self, office):
        agents = RuleBasedAgents()
        spec = agents.configure(
            build_context(office, ["I will watch the Calendar at eye level."]), office
        )
        assert spec.widgets["Calendar"].observation_probability >= 0.7
        kinds = spec.objective_kinds()
        assert ObjectiveKind.FIELD_OF_VIEW in kinds
        assert ObjectiveKind.NECK_STRAIN in kinds

    def test_alignment_keyword(self, office):
        agents = RuleBasedAgents()
        spec = agents.configure(
            build_context(office, ["Align the Email and the Calendar; I read both."]), office
        )
        alignment = [o for o in spec.active_objectives if o.kind is ObjectiveKind.ALIGNMENT]
        assert alignment and alignment[0].x_tolerance == 0.02

    def test_output_always_validates(self, office, living):
        agents = RuleBasedAgents()
        corpus = load_fewshot(asset_text("corpus_24.jsonl"))
        for scene in (office, living):
            for ex in corpus:
                spec = agents.configure(build_context(scene, [ex.instruction]), scene)
                assert validate_spec(spec, scene) == []

    def test_no_mentions_enables_catalog_defaults(self, office):
        agents = RuleBasedAgents()
        spec = agents.configure(build_context(office, ["Make it nice."]), office)
        assert spec.enabled_widgets() == sorted(w.name for w in office.widgets)
        assert len(spec.active_objectives) >= 2


class TestValidateCandidates:
    def spec_with_protected_mug(self, office):
        return OptimizationSpec(
            widgets={"Map": WidgetParams()},
            objects={"mug": ObjectParams(overlay_suitability=0.0)},
            active_objectives=(
                Objective(ObjectiveKind.FIELD_OF_VIEW),
                Objective(ObjectiveKind.OVERLAY),
            ),
        )

    def candidate(self, pos, objectives=(0.0, 0.0)):
        return CandidateLayout(
            layout=Layout({"Map": pos}),
            objectives=tuple(objectives),
            violations=(0.0, 0.0, 0.0),
            feasible=True,
        )

    def test_single_candidate_chosen(self, office):
        agents = RuleBasedAgents()
        spec = self.spec_with_protected_mug(office)
        ctx = build_context(office, ["anything"])
        choice = agents.validate_candidates(
            ctx, office, [self.candidate(Vec3(-0.4, 1.2, -0.4))], spec
        )
        assert choice.index == 0

    def test_protected_object_decides(self, office):
        agents = RuleBasedAgents()
        spec = self.spec_with_protected_mug(office)
        ctx = build_context(office, ["do not block the mug"])
        blocking = self.candidate(Vec3(0.145, 1.01, -0.2))  # on the eye-mug line
        clear = self.candidate(Vec3(-0.4, 1.2, -0.4))
        choice = agents.validate_candidates(ctx, office, [blocking, clear], spec)
        assert choice.index == 1

    def test_tie_breaks_to_lowest_index(self, office):
        agents = RuleBasedAgents()
        spec = self.spec_with_protected_mug(office)
        ctx = build_context(office, ["anything"])
        a = self.candidate(Vec3(-0.4, 1.2, -0.4))
        b = self.candidate(Vec3(-0.4, 1.2, -0.4))
        choice = agents.validate_candidates(ctx, office, [a, b], spec)
        assert choice.index == 0

    def test_stable_under_duplication(self, office):
        agents = RuleBasedAgents()
        spec = self.spec_with_protected_mug(office)
        ctx = build_context(office, ["anything"])
        a = self.candidate(Vec3(-0.4, 1.2, -0.4), objectives=(1.0, 0.5))
        b = self.candidate(Vec3(0.3, 1.3, -0.45), objectives=(0.2, 0.1))
        base = agents.validate_candidates(ctx, office, [a, b], spec)
        doubled = agents.validate_candidates(ctx, office, [a, b, a, b], spec)
        assert doubled.index == base.index

    def test_mean_normalized_objectives_decide(self, office):
        agents = RuleBasedAgents()
        spec = self.spec_with_protected_mug(office)
        ctx = build_context(office, ["anything"])
        worse = self.candidate(Vec3(-0.4, 1.2, -0.4), objectives=(1.0, 1.0))
        better = self.candidate(Vec3(-0.3, 1.3, -0.5), objectives=(0.0, 0.0))
        choice = agents.validate_candidates(ctx, office, [worse, better], spec)
        assert choice.index == 1


class TestClassifyCorpus:
    def test_single_matching(self, office):
        acc, _ = classify_corpus(
            [FewShotExample("Make it nice.", "ambiguous")], RuleBasedAgents(), office
        )
        assert acc == 1.0

    def test_three_of_four(self, office):
        examples = [
            FewShotExample("Make it nice.", "ambiguous"),
            FewShotExample("Hello there.", "ambiguous"),
            FewShotExample(WELL_FORMED, "well-formed"),
            FewShotExample("Tidy this up, please.", "well-formed"),  # actually ambiguous
        ]
        acc, confusion = classify_corpus(examples, RuleBasedAgents(), office)
        assert acc == 0.75
        assert confusion["well-formed->ambiguous"] == 1

    def test_packaged_corpus_is_perfect(self, office):
        corpus = load_fewshot(asset_text("corpus_24.jsonl"))
        assert len(corpus) == 24
        acc, confusion = classify_corpus(corpus, RuleBasedAgents(), office)
        assert acc == 1.0
        assert confusion["well-formed->clear"] == 12
        assert confusion["ambiguous->ambiguous"] == 12

    def test_empty_corpus_rejected(self, office):
        with pytest.raises(AgentError):
            classify_corpus([], RuleBasedAgents(), office)

    def test_bad_label_rejected(self):
        with pytest.raises(AgentError):
            load_fewshot('{"instruction": "x", "label": "maybe"}')


def remote_agents(handler, fewshot=()):
    transport = httpx.MockTransport(handler)
    return RemoteAgents(
        config=RemoteConfig(endpoint="http://llm.test/v1/chat/completions", timeout_s=0.5),
        fewshot=fewshot,
        client=httpx.Client(transport=transport),
    )


def completion(payload: str) -> httpx.Response:
    return httpx.Response(200, json={"choices": [{"message": {"content": payload}}]})


class TestRemoteAgents:
    def test_canned_spec_parses(self, office):
        spec_doc = {
            "widgets": [
                {"name": "Map", "enabled": True, "interaction_probability": 0.8},
                {"name": "Calendar", "enabled": True},
            ],
            "objectives": [{"kind": "field_of_view"}, {"kind": "arm_exertion"}],
        }

        def handler(request):
            return completion(json.dumps(spec_doc))

        agents = remote_agents(handler)
        spec = agents.configure(build_context(office, ["touch the Map"]), office)
        assert spec.enabled_widgets() == ["Calendar", "Map"]

    def test_timeout_surfaces_as_agent_error(self, office):
        def handler(request):
            raise httpx.ConnectTimeout("too slow", request=request)

        agents = remote_agents(handler)
        with pytest.raises(AgentError, match="timed out"):
            agents.remote_complete("hello")

    def test_http_500_carries_status(self, office):
        def handler(request):
            return httpx.Response(500, text="boom")

        agents = remote_agents(handler)
        with pytest.raises(AgentError) as err:
            agents.remote_complete("hello")
        assert err.value.status == 500

    def test_unparseable_after_retry_raises(self, office):
        calls = []

        def handler(request):
            calls.append(1)
            return completion("not json at all")

        agents = remote_agents(handler)
        with pytest.raises(AgentError, match="not parseable"):
            agents.detect_ambiguity(build_context(office, ["hello"]))
        assert len(calls) == 2  # one retry

    def test_retry_recovers_on_second_attempt(self, office):
        replies = iter(["garbage", '{"sufficient": true}'])

        def handler(request):
            return completion(next(replies))

        agents = remote_agents(handler)
        outcome = agents.detect_ambiguity(build_context(office, ["hello"]))
        assert outcome.clear

    def test_ambiguous_reply_with_question(self, office):
        def handler(request):
            return completion(
                '{"sufficient": false, "question": "Which widgets?", "facet": "widgets"}'
            )

        agents = remote_agents(handler)
        outcome = agents.detect_ambiguity(build_context(office, ["hello"]))
        assert not outcome.clear
        assert outcome.question == "Which widgets?"
        assert outcome.facet is Facet.WIDGETS

    def test_validation_choice_range_checked(self, office):
        def handler(request):
            return completion('{"choice": 7, "rationale": "no"}')

        agents = remote_agents(handler)
        cand = CandidateLayout(Layout({"Map": Vec3(0, 1.2, -0.4)}), (0.0,), (0, 0, 0), True)
        with pytest.raises(AgentError, match="out-of-range"):
            agents.validate_candidates(
                build_context(office, ["x"]), office, [cand],
                OptimizationSpec(widgets={"Map": WidgetParams()}),
            )

    def test_fewshot_block_rendered_into_prompt(self, office):
        seen = {}

        def handler(request):
            seen["body"] = json.loads(request.content)
            return completion('{"sufficient": true}')

        fewshot = [FewShotExample("touch the Map on the desk", "well-formed")]
        agents = remote_agents(handler, fewshot=fewshot)
        agents.detect_ambiguity(build_context(office, ["hello"]))
        joined = json.dumps(seen["body"])
        assert "touch the Map on the desk" in joined

    def test_missing_endpoint_env_rejected(self, monkeypatch):
        monkeypatch.delenv("AUTOOPT_LLM_ENDPOINT", raising=False)
        with pytest.raises(AgentError, match="AUTOOPT_LLM_ENDPOINT"):
            RemoteConfig.from_env()


class TestHelpers:
    def test_combine_idempotent(self):
        history = ["Put the Map up", "I will touch it."]
        once = combine_instructions(history)
        assert once == "Put the Map up. I will touch it."
        assert combine_instructions([once]) == once

    def test_context_catalog(self, office):
        ctx = build_context(office, ["x"])
        assert ("Map", "an interactive city map") in ctx.widget_catalog
        assert "monitor" in ctx.scene_summary
