"""Rule-based simple QA rendering."""

from __future__ import annotations

import pytest

from agroforge import asset_bank
from agroforge.simpleqa import QATemplate, SimpleQA, default_templates, render

from conftest import make_record

BANK = asset_bank.simpleqa_templates()
DISEASE = default_templates("disease", BANK)


class TestTemplateBank:
    def test_domain_filter(self):
        assert {t.domain for t in DISEASE} == {"disease"}
        assert {t.attribute_key for t in DISEASE} == {"plant_name", "health_status", "disease_name"}
        assert default_templates("unknown", BANK) == []

    def test_unknown_attribute_key_rejected(self):
        with pytest.raises(ValueError):
            QATemplate(template_id="x", domain="disease", attribute_key="color", phrasings=("q",))

    def test_empty_phrasings_rejected(self):
        with pytest.raises(ValueError):
            QATemplate(template_id="x", domain="disease", attribute_key="plant_name", phrasings=())

    def test_every_phrasing_carries_a_brevity_directive(self):
        directives = ("only", "yes or no", "just")
        for template in BANK:
            for phrasing in template.phrasings:
                assert any(d in phrasing.lower() for d in directives), phrasing


class TestRender:
    def test_one_qa_per_applicable_template(self):
        record = make_record()
        qas = render(record, DISEASE, seed=0)
        assert [qa.attribute_key for qa in qas] == ["plant_name", "health_status", "disease_name"]
        assert all(qa.image_id == record.id for qa in qas)

    def test_gold_is_normalized_attribute_value(self):
        record = make_record()
        by_key = {qa.attribute_key: qa for qa in render(record, DISEASE, seed=0)}
        assert by_key["plant_name"].gold_answer == "tomato"
        assert by_key["disease_name"].gold_answer == "early blight"

    def test_answer_map_turns_status_into_yes_no(self):
        diseased = make_record()
        healthy = make_record(
            record_id="ds/healthy/a.jpg", class_label="healthy",
            plant_name="tomato", health_status="healthy",
        )
        diseased_qa = {qa.attribute_key: qa for qa in render(diseased, DISEASE, seed=0)}
        healthy_qa = {qa.attribute_key: qa for qa in render(healthy, DISEASE, seed=0)}
        assert diseased_qa["health_status"].gold_answer == "yes"
        assert healthy_qa["health_status"].gold_answer == "no"

    def test_healthy_record_gets_no_disease_question(self):
        healthy = make_record(
            record_id="ds/healthy/a.jpg", class_label="healthy",
            plant_name="tomato", health_status="healthy",
        )
        keys = [qa.attribute_key for qa in render(healthy, DISEASE, seed=0)]
        assert "disease_name" not in keys

    def test_phrasing_choice_is_deterministic_per_record(self):
        record = make_record()
        assert render(record, DISEASE, seed=5) == render(record, DISEASE, seed=5)

    def test_phrasing_varies_across_records(self):
        template = DISEASE[0]
        questions = {
            render(make_record(record_id=f"ds/cls/img_{i}.jpg"), [template], seed=5)[0].question
            for i in range(30)
        }
        assert questions == set(template.phrasings)

    def test_question_comes_from_template_phrasings(self):
        record = make_record()
        for qa in render(record, DISEASE, seed=9):
            template = next(t for t in DISEASE if t.attribute_key == qa.attribute_key)
            assert qa.question in template.phrasings

    def test_gold_answer_must_be_single_concept(self):
        with pytest.raises(ValueError):
            SimpleQA(image_id="x", question="q", gold_answer="a full sentence.", attribute_key="plant_name")

    def test_to_conversation(self):
        qa = render(make_record(), DISEASE, seed=0)[0]
        conv = qa.to_conversation()
        assert conv.kind == "simple"
        assert conv.generator_model == "rule-based"
        assert len(conv.turns) == 1
        assert conv.turns[0].question == qa.question
        assert conv.turns[0].answer == qa.gold_answer


def test_insect_fruit_weed_domains_render():
    cases = [
        ("insect", make_record(record_id="i/Fall_Armyworm/a.jpg", class_label="Fall_Armyworm", insect_name="fall armyworm")),
        ("fruit", make_record(record_id="f/Mango/a.jpg", class_label="Mango", fruit_name="mango")),
        ("weed", make_record(record_id="w/Crabgrass/a.jpg", class_label="Crabgrass", weed_name="crabgrass")),
    ]
    for domain, record in cases:
        qas = render(record, default_templates(domain, BANK), seed=1)
        assert len(qas) == 1, domain
        assert qas[0].gold_answer == list(record.attributes.values())[0]
