import json

import numpy as np
import pytest

from autoopt.assets import load_asset_json
from autoopt.config import (
    OptimizationSpec,
    ProblemInstance,
    SpecError,
    compile_problem,
    parse_spec,
    pin_widget,
    spec_to_dict,
    validate_spec,
)
from autoopt.objectives import Objective, ObjectiveKind, ObjectParams, WidgetParams
from autoopt.scene import Layout, Vec3, load_scene


@pytest.fixture
def office():
    return load_scene(load_asset_json("office.json"))


def minimal_spec_doc():
    return {
        "widgets": [
            {"name": "Map", "enabled": True, "observation_probability": 0.8},
            {"name": "Calendar", "enabled": True},
        ],
        "objectives": [
            {"kind": "field_of_view", "params": {"foveal_degrees": 5}},
            {"kind": "neck_strain"},
        ],
    }


class TestParse:
    def test_minimal_document(self):
        spec = parse_spec(json.dumps(minimal_spec_doc()))
        assert spec.enabled_widgets() == ["Calendar", "Map"]
        assert spec.candidate_count == 4
        assert spec.seed == 42
        assert spec.distance_threshold == 0.65

    def test_omitted_suitability_defaults_to_one(self):
        doc = minimal_spec_doc()
        doc["objects"] = [{"name": "monitor"}]
        spec = parse_spec(doc)
        assert spec.objects["monitor"].overlay_suitability == 1.0

    def test_duplicate_anchor_rejected(self):
        doc = minimal_spec_doc()
        doc["widgets"][0]["anchor"] = "monitor"
        doc["widgets"][1]["anchor"] = "monitor"
        doc["objectives"].append({"kind": "anchor"})
        with pytest.raises(SpecError, match="one widget per object"):
            parse_spec(doc)

    def test_anchor_requires_anchor_objective(self):
        doc = minimal_spec_doc()
        doc["widgets"][0]["anchor"] = "monitor"
        with pytest.raises(SpecError, match="anchor objective required"):
            parse_spec(doc)

    def test_fewer_than_two_objectives_rejected(self):
        doc = minimal_spec_doc()
        doc["objectives"] = doc["objectives"][:1]
        with pytest.raises(SpecError, match="two active objectives"):
            parse_spec(doc)

    def test_no_enabled_widget_rejected(self):
        doc = minimal_spec_doc()
        for w in doc["widgets"]:
            w["enabled"] = False
        with pytest.raises(SpecError, match="at least one widget"):
            parse_spec(doc)

    def test_bad_probability_names_path(self):
        doc = minimal_spec_doc()
        doc["widgets"][0]["interaction_probability"] = 1.5
        with pytest.raises(SpecError, match=r"spec.widgets\[0\]"):
            parse_spec(doc)

    def test_round_trip(self):
        doc = minimal_spec_doc()
        doc["widgets"][0]["anchor"] = "monitor"
        doc["widgets"][1]["pinned"] = [0.0, 1.2, -0.5]
        doc["objectives"].append({"kind": "anchor"})
        doc["objects"] = [{"name": "monitor", "overlay_suitability": 0.4}]
        spec = parse_spec(doc)
        again = parse_spec(spec_to_dict(spec))
        assert again == spec


class TestValidate:
    def test_valid_office_spec_empty(self, office):
        spec = parse_spec(minimal_spec_doc())
        assert validate_spec(spec, office) == []

    def test_anchor_to_low_suitability_object(self, office):
        doc = minimal_spec_doc()
        doc["widgets"][0]["anchor"] = "monitor"
        doc["objectives"].append({"kind": "anchor"})
        doc["objects"] = [{"name": "monitor", "overlay_suitability": 0.0}]
        spec = parse_spec(doc)
        violations = validate_spec(spec, office)
        assert len(violations) == 1
        assert "cannot anchor" in violations[0]

    def test_anchor_to_unknown_object(self, office):
        doc = minimal_spec_doc()
        doc["widgets"][0]["anchor"] = "fishtank"
        doc["objectives"].append({"kind": "anchor"})
        spec = parse_spec(doc)
        violations = validate_spec(spec, office)
        assert len(violations) == 1
        assert "unknown object" in violations[0]

    def test_unknown_widget_name(self, office):
        spec = OptimizationSpec(
            widgets={"Ghost": WidgetParams()},
            active_objectives=(
                Objective(ObjectiveKind.FIELD_OF_VIEW),
                Objective(ObjectiveKind.NECK_STRAIN),
            ),
        )
        violations = validate_spec(spec, office)
        assert any("unknown widget" in v for v in violations)


class TestCompile:
    def spec(self, names=("Map", "Calendar", "Email")):
        return OptimizationSpec(
            widgets={n: WidgetParams() for n in names},
            active_objectives=(
                Objective(ObjectiveKind.FIELD_OF_VIEW),
                Objective(ObjectiveKind.NECK_STRAIN),
            ),
        )

    def test_three_enabled_genome_length_nine(self, office):
        problem = compile_problem(self.spec(), office)
        assert problem.n_var == 9
        assert problem.variable_widgets == ["Calendar", "Email", "Map"]

    def test_pinned_widget_excluded_from_genome(self, office):
        spec = pin_widget(self.spec(), office, "Map", Vec3(0.0, 1.2, -0.5))
        problem = compile_problem(spec, office)
        assert problem.n_var == 6
        layout = problem.decode(problem.xl)
        assert layout.positions["Map"] == Vec3(0.0, 1.2, -0.5)

    def test_disabled_widget_absent(self, office):
        spec = self.spec()
        widgets = dict(spec.widgets)
        widgets["Email"] = WidgetParams(enabled=False)
        spec = OptimizationSpec(widgets=widgets, active_objectives=spec.active_objectives)
        problem = compile_problem(spec, office)
        assert problem.n_var == 6
        layout = problem.decode(problem.xl)
        assert "Email" not in layout.positions

    def test_anchored_disabled_widget_is_compile_error(self, office):
        widgets = {
            "Map": WidgetParams(enabled=False, anchor="monitor"),
            "Calendar": WidgetParams(),
        }
        spec = OptimizationSpec(
            widgets=widgets,
            active_objectives=(
                Objective(ObjectiveKind.FIELD_OF_VIEW),
                Objective(ObjectiveKind.ANCHOR),
            ),
        )
        with pytest.raises(SpecError, match="disabled"):
            compile_problem(spec, office)

    def test_zero_enabled_is_compile_error(self, office):
        widgets = {"Map": WidgetParams(enabled=False)}
        spec = OptimizationSpec(
            widgets=widgets,
            active_objectives=(
                Objective(ObjectiveKind.FIELD_OF_VIEW),
                Objective(ObjectiveKind.NECK_STRAIN),
            ),
        )
        with pytest.raises(SpecError):
            compile_problem(spec, office)

    def test_deterministic_variable_ordering(self, office):
        a = compile_problem(self.spec(), office)
        b = compile_problem(self.spec(), office)
        assert a.variable_widgets == b.variable_widgets
        assert np.array_equal(a.xl, b.xl)
        assert np.array_equal(a.xu, b.xu)

    def test_total_on_box_random_genomes(self, office):
        problem = compile_problem(self.spec(), office)
        rng = np.random.default_rng(8)
        for _ in range(50):
            genome = rng.uniform(problem.xl, problem.xu)
            F, G = problem.evaluate(genome[None, :])
            assert np.all(np.isfinite(F))
            assert np.all(np.isfinite(G))
            assert np.all(G >= 0)


class TestPin:
    def test_pin_unknown_widget_rejected(self, office):
        spec = TestCompile().spec()
        with pytest.raises(SpecError):
            pin_widget(spec, office, "Ghost", Vec3(0, 1.2, -0.5))

    def test_pin_outside_bounds_rejected(self, office):
        spec = TestCompile().spec()
        with pytest.raises(SpecError, match="outside search bounds"):
            pin_widget(spec, office, "Map", Vec3(9.0, 1.2, -0.5))

    def test_pin_disabled_widget_rejected(self, office):
        spec = TestCompile().spec()
        widgets = dict(spec.widgets)
        widgets["Map"] = WidgetParams(enabled=False)
        spec = OptimizationSpec(widgets=widgets, active_objectives=spec.active_objectives)
        with pytest.raises(SpecError):
            pin_widget(spec, office, "Map", Vec3(0, 1.2, -0.5))
