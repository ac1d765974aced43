import logging
import re
from dataclasses import dataclass, field

import numpy as np

from ..attention.discrete import score_candidates

__all__ = ['SubGoalDecision', 'PlanningContext', 'SemanticOracleBackend', 'TinyLLMBackend', 'AnswerParseError',
           'plan', 'render_answer', 'parse_answer', 'rank_with_model', 'answer_tail', 'ANSWER_PREFIX',
           'BACKENDS', 'FRONTIER_LABEL']

logger = logging.getLogger(__name__)

ANSWER_PREFIX = 'The next subgoal is'
FRONTIER_LABEL = 'frontier'
BACKENDS = ('semantic-oracle', 'tiny-llm')

_ANSWER = re.compile(r'^The next subgoal is (.+) at position \((\d+),(\d+),(\d+)\)\.$')


class AnswerParseError(ValueError):
    pass


@dataclass
class SubGoalDecision:
    object_id: int
    label: str
    position: tuple
    is_final_goal: bool = False
    raw_answer: str = ''
    scores: list = field(default_factory=list, compare=False)

    def to_dict(self):
        return {'object_id': self.object_id, 'label': self.label, 'position': list(self.position),
                'is_final_goal': self.is_final_goal, 'raw_answer': self.raw_answer}


@dataclass
class PlanningContext:
    """Cached blocks of the selected groups and the rendered prompt suffix."""
    blocks: list = field(default_factory=list)
    suffix_text: str = ''


def answer_tail(label, position):
    return ' %s at position (%d,%d,%d).' % ((label,) + tuple(position))


def render_answer(decision):
    return ANSWER_PREFIX + answer_tail(decision.label, decision.position)


def parse_answer(text, nav_map, goal=None, radius=None):
    '''
    Strict inverse of render_answer.

    The label and position must match a map object exactly; otherwise the nearest object
    with that label within radius (default the map's dedup radius, ties to the lowest id) is
    taken. Anything else raises AnswerParseError. is_final_goal is read from goal, so a
    final-goal decision only parses back to itself when the same goal is passed.
    '''
    m = _ANSWER.match(text.strip())
    if m is None:
        raise AnswerParseError('answer does not follow the template: %r' % text)
    label = m.group(1)
    pos = np.array([int(m.group(i)) for i in (2, 3, 4)], dtype=float)
    radius = nav_map.dedup_radius if radius is None else radius
    same = [o for o in sorted(nav_map.objects.values(), key=lambda o: o.id) if o.label == label]
    best, best_d = None, None
    for o in same:
        d = float(np.linalg.norm(pos - np.asarray(o.position, dtype=float)))
        if d <= radius and (best is None or d < best_d):
            best, best_d = o, d
    if best is None:
        raise AnswerParseError('no %r within %s of (%d,%d,%d)' % ((label, radius) + tuple(int(c) for c in pos)))
    is_goal = goal is not None and label.lower() == goal.lower()
    decision = SubGoalDecision(best.id, best.label, best.position, is_goal)
    decision.raw_answer = render_answer(decision)
    return decision


def rank_with_model(model, blocks, prompt_suffix, candidates):
    """(candidate, score) pairs by descending score; equal scores keep input order."""
    scores = score_candidates(model, blocks, prompt_suffix, candidates)
    order = sorted(range(len(candidates)), key=lambda i: -scores[i])
    return [(candidates[i], scores[i]) for i in order]


class SemanticOracleBackend:
    """Raw dot product between the goal and each candidate label embedding."""

    name = 'semantic-oracle'

    def __init__(self, cache):
        self.cache = cache

    def score(self, nav_map, candidate_ids, goal, context=None):
        g = self.cache.text_vector(goal)
        return np.array([float(np.dot(self.cache.text_vector(nav_map.entry(i).label), g)) for i in candidate_ids])


class TinyLLMBackend:
    """Log-likelihood of each candidate answer under the model, over the cached group blocks."""

    name = 'tiny-llm'

    def __init__(self, model):
        self.model = model

    def score(self, nav_map, candidate_ids, goal, context=None):
        context = context or PlanningContext()
        suffix = self.model.tokenize(context.suffix_text + ' ' + ANSWER_PREFIX)
        texts = [answer_tail(nav_map.entry(i).label, nav_map.entry(i).position) for i in candidate_ids]
        ranked = rank_with_model(self.model, context.blocks, suffix, texts)
        by_text = {t: s for t, s in ranked}
        return np.array([by_text[t] for t in texts])


def plan(nav_map, retrieval_plan, goal, backend, context=None, frontier=None):
    '''
    Sub-goal for this step.

    A goal object already in the map is chosen outright. Otherwise the backend scores the
    unvisited objects of the selected groups and the best one (ties to the lowest id) is
    chosen. With no candidates the frontier cell (a position, or a callable producing one)
    is returned under the label "frontier", or None when there is no frontier left.
    '''
    gid = nav_map.find_goal(goal)
    if gid is not None:
        entry = nav_map.entry(gid)
        d = SubGoalDecision(gid, entry.label, entry.position, True)
        d.raw_answer = render_answer(d)
        return d
    candidates = sorted(oid for g in retrieval_plan.selected for oid in nav_map.group(g).members
                        if not nav_map.entry(oid).visited)
    if not candidates:
        if callable(frontier):
            frontier = frontier()
        if frontier is None:
            return None
        pos = tuple(int(c) for c in frontier)
        d = SubGoalDecision(None, FRONTIER_LABEL, pos, False)
        d.raw_answer = render_answer(d)
        return d
    scores = backend.score(nav_map, candidates, goal, context)
    k = int(np.argmax(scores))
    entry = nav_map.entry(candidates[k])
    d = SubGoalDecision(entry.id, entry.label, entry.position, False,
                        scores=[[i, float(s)] for i, s in zip(candidates, scores)])
    d.raw_answer = render_answer(d)
    return d
