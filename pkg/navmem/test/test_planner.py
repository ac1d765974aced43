import numpy as np
import pytest

from navmem.attention import ModelConfig, build_model, compute_group_kv
from navmem.clustering import Assignment
from navmem.navmap import NavigationMap, render_group, render_prompt_suffix
from navmem.planner import (AnswerParseError, PlanningContext, SemanticOracleBackend, SubGoalDecision,
                            TinyLLMBackend, parse_answer, plan, rank_with_model, render_answer)
from navmem.retrieval import EmbeddingCache, HashedTrigramEmbedding, RetrievalPlan

SMALL = ModelConfig(num_layers=2, num_heads=2, model_dim=32, vocab_size=512)


def living_and_bath():
    m = NavigationMap()
    m.add_detections(0, [('sofa', (2, 2, 10)), ('rug', (3, 2, 10))])
    m.place([Assignment(0), Assignment(1)], 0)
    m.add_detections(1, [('toilet', (20, 2, 10)), ('sink', (21, 3, 10))])
    m.place([Assignment(2), Assignment(3)], 1)
    return m


def oracle():
    return SemanticOracleBackend(EmbeddingCache(HashedTrigramEmbedding()))


def test_answer_roundtrip_through_the_map():
    m = living_and_bath()
    d = SubGoalDecision(2, 'toilet', (20, 2, 10))
    text = render_answer(d)
    assert text == 'The next subgoal is toilet at position (20,2,10).'
    assert parse_answer(text, m).object_id == 2


def test_final_goal_decision_roundtrip():
    m = living_and_bath()
    d = SubGoalDecision(2, 'toilet', (20, 2, 10), is_final_goal=True)
    d.raw_answer = render_answer(d)
    assert parse_answer(d.raw_answer, m, goal='toilet') == d
    assert parse_answer(d.raw_answer, m, goal='Toilet').is_final_goal
    assert not parse_answer(d.raw_answer, m).is_final_goal


def test_parse_answer_snaps_to_nearby_object():
    m = living_and_bath()
    assert parse_answer('The next subgoal is sofa at position (3,3,10).', m).object_id == 0
    with pytest.raises(AnswerParseError):
        parse_answer('The next subgoal is sofa at position (9,9,10).', m)
    with pytest.raises(AnswerParseError):
        parse_answer('I would go to the sofa.', m)
    with pytest.raises(AnswerParseError):
        parse_answer('The next subgoal is bed at position (2,2,10).', m)


def test_goal_in_map_is_chosen_outright():
    m = living_and_bath()
    m.add_detections(2, [('TV', (5, 5, 40))])
    m.place([Assignment(4, 0)], 2)
    d = plan(m, RetrievalPlan(selected=[1]), 'tv', oracle())
    assert d.object_id == 4 and d.is_final_goal


def test_semantic_backend_prefers_related_objects():
    m = living_and_bath()
    d = plan(m, RetrievalPlan(selected=[0, 1]), 'tv', oracle())
    assert d.label in ('sofa', 'rug')
    assert not d.is_final_goal
    assert [s[0] for s in d.scores] == [0, 1, 2, 3]
    d = plan(m, RetrievalPlan(selected=[0, 1]), 'bathtub', oracle())
    assert d.label in ('toilet', 'sink')


def test_visited_objects_are_not_candidates():
    m = living_and_bath()
    m.mark_visited(0)
    m.mark_visited(1)
    d = plan(m, RetrievalPlan(selected=[0]), 'tv', oracle(), frontier=(7, 8, 0))
    assert d.object_id is None and d.label == 'frontier' and d.position == (7, 8, 0)
    assert plan(m, RetrievalPlan(selected=[0]), 'tv', oracle(), frontier=lambda: None) is None


def test_rank_with_model_is_sorted_and_complete():
    model = build_model(SMALL)
    m = living_and_bath()
    blocks = [compute_group_kv(model, model.tokenize(render_group(m, g)), 0, g) for g in m.group_ids]
    suffix = model.tokenize(render_prompt_suffix('tv', [], m) + ' The next subgoal is')
    cands = [' sofa at position (2,2,10).', ' rug at position (3,2,10).', ' toilet at position (20,2,10).']
    ranked = rank_with_model(model, blocks, suffix, cands)
    assert sorted(c for c, _ in ranked) == sorted(cands)
    scores = [s for _, s in ranked]
    assert scores == sorted(scores, reverse=True)


def test_tiny_llm_backend_scores_every_candidate():
    model = build_model(SMALL)
    m = living_and_bath()
    blocks = [compute_group_kv(model, model.tokenize(render_group(m, g)), 0, g) for g in m.group_ids]
    ctx = PlanningContext(blocks, render_prompt_suffix('tv', [], m))
    d = plan(m, RetrievalPlan(selected=[0, 1]), 'tv', TinyLLMBackend(model), ctx)
    assert d.object_id in (0, 1, 2, 3)
    assert len(d.scores) == 4 and np.all(np.isfinite([s for _, s in d.scores]))
