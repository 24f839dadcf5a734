import json

import pytest

from kgreason.agent import (
    Action,
    EpisodeTrace,
    HeuristicPolicy,
    LLMPolicy,
    PolicyBudget,
    PolicyError,
    content_tokens,
    parse_tool_call,
    replay_trace,
    run_episode,
)
from kgreason.kg import KnowledgeGraph
from kgreason.llm import EndpointBudgetExceeded


def q(qid, text, topic):
    return {"id": qid, "question": text, "topic": topic}


class ScriptedClient:
    """Stands in for the endpoint: returns canned responses in order."""

    def __init__(self, responses, max_calls=None):
        self.responses = list(responses)
        self.calls = 0
        self.max_calls = max_calls
        self.requests = []

    def chat(self, messages, temperature=0.0):
        if self.max_calls is not None and self.calls >= self.max_calls:
            raise EndpointBudgetExceeded("out of calls")
        self.requests.append(messages)
        self.calls += 1
        return self.responses.pop(0)


class TestContentTokens:
    def test_camel_split_and_linkwords(self):
        assert content_tokens("hasUncle") == {"uncle"}
        assert content_tokens("Which entity has relation brotherOf with 139?") == {
            "brother", "139",
        }

    def test_snake_tokens(self):
        assert content_tokens("wife_of") == {"wife"}


class TestHeuristicPolicy:
    def test_brother_question_grounds_brother_path_first(self):
        g = KnowledgeGraph(
            [
                ("139", "brotherOf", "205"),
                ("139", "brotherOf", "138"),
                ("139", "fatherOf", "14"),
            ]
        )
        question = q("b1", "Who is 139's brother?", "139")
        policy = HeuristicPolicy(
            question["question"], "139", synonyms={"brother": ["brotherOf"]}, max_hops=3
        )
        trace = run_episode(g, question, policy)
        kinds = [s["action"]["kind"] for s in trace.steps]
        assert kinds == ["explore", "ground", "synthesize"]
        ground_step = trace.steps[1]["action"]
        assert ground_step["paths"][0] == "brotherOf"
        assert set(trace.prediction) == {"205", "138"}

    def test_uncle_composition_fixture(self):
        # hasUncle(justin, john) removed; the composition body survives
        g = KnowledgeGraph(
            [("justin", "hasParent", "mary"), ("mary", "hasSibling", "john")]
        )
        question = q("u1", "Which entity has relation hasUncle with justin? [topic is subject]", "justin")
        policy = HeuristicPolicy(
            question["question"],
            "justin",
            synonyms={"uncle": ["hasParent", "hasSibling"]},
            max_hops=3,
        )
        trace = run_episode(g, question, policy)
        assert "john" in trace.prediction
        assert trace.termination == "synthesized"
        # oracle check: john is exactly the 2-hop terminal
        assert trace.prediction == ["john"]

    def test_no_overlap_abstains_after_max_escalation(self):
        g = KnowledgeGraph([("justin", "hasParent", "mary"), ("mary", "hasSibling", "john")])
        question = q("a1", "completely unrelated words here", "justin")
        policy = HeuristicPolicy(question["question"], "justin", max_hops=3)
        trace = run_episode(g, question, policy)
        kinds = [s["action"]["kind"] for s in trace.steps]
        assert kinds == ["explore", "explore", "explore", "synthesize"]
        assert trace.prediction == []
        assert trace.termination == "synthesized"

    def test_deterministic_action_sequence(self, celebrity_family):
        question = q("d1", "Who is Justin Bieber's parent?", "Justin Bieber")
        runs = []
        for _ in range(2):
            policy = HeuristicPolicy(question["question"], "Justin Bieber", max_hops=3)
            trace = run_episode(celebrity_family, question, policy)
            runs.append([json.dumps(s["action"], sort_keys=True) for s in trace.steps])
        assert runs[0] == runs[1]

    def test_prediction_justified_by_supporting_paths(self, celebrity_family):
        question = q("j1", "Who is Justin Bieber's parent?", "Justin Bieber")
        policy = HeuristicPolicy(question["question"], "Justin Bieber", max_hops=3)
        trace = run_episode(celebrity_family, question, policy)
        assert trace.prediction
        assert trace.unjustified == []
        for entity in trace.prediction:
            assert any(entity in path for path in trace.supporting_paths)


class TestBudget:
    def test_budget_one_action_flags_fallback(self, celebrity_family):
        question = q("f1", "Who is Justin Bieber's parent?", "Justin Bieber")
        policy = HeuristicPolicy(question["question"], "Justin Bieber", max_hops=3)
        trace = run_episode(celebrity_family, question, policy, PolicyBudget(max_actions=1))
        assert trace.termination == "budget"
        assert trace.fallback
        assert trace.step_count == 1  # only the first explore ran

    def test_fallback_prediction_ranks_overlapping_paths(self, celebrity_family):
        # two actions: explore + ground happen, then the budget ends the episode
        question = q("f2", "Who is Justin Bieber's parent?", "Justin Bieber")
        policy = HeuristicPolicy(question["question"], "Justin Bieber", max_hops=3)
        trace = run_episode(celebrity_family, question, policy, PolicyBudget(max_actions=2))
        assert trace.termination == "budget"
        assert trace.fallback
        assert "Jeremy Bieber" in trace.prediction

    def test_budget_validation(self):
        with pytest.raises(ValueError):
            PolicyBudget(max_actions=0)

    def test_wall_clock_budget(self, celebrity_family):
        class SlowPolicy:
            def decide(self, obs):
                import time

                time.sleep(0.05)
                return Action("explore", entity="Justin Bieber", hops=1)

            def repair(self, obs, reason):
                return Action("synthesize")

        question = q("w1", "Who is Justin Bieber's parent?", "Justin Bieber")
        trace = run_episode(
            celebrity_family, question, SlowPolicy(),
            PolicyBudget(max_actions=10, wall_clock_s=0.01),
        )
        assert trace.termination == "budget"
        assert trace.step_count <= 1


class TestToolCallParsing:
    def test_direct_parse(self):
        action = parse_tool_call(
            '{"tool":"relation_path_mining","entity":"calvados","max_hops":2}'
        )
        assert action == Action("explore", entity="calvados", hops=2)

    def test_grounding_parse(self):
        action = parse_tool_call(
            '{"tool":"path_grounding","entity":"e","relation_paths":["p -> q"]}'
        )
        assert action == Action("ground", entity="e", paths=("p -> q",))

    def test_synthesis_parse_strips_evidence_prefix(self):
        action = parse_tool_call(
            '{"tool":"complete_task","explored_reasoning_paths":["Evidence: (a, p, b)"],'
            '"answer_entities":["b"]}'
        )
        assert action.selected == ("(a, p, b)",)
        assert action.answers == ("b",)

    def test_json_embedded_in_prose(self):
        action = parse_tool_call(
            'Sure, I will explore. {"tool": "relation_path_mining", "entity": "x", "max_hops": 1} Done.'
        )
        assert action.kind == "explore"

    def test_unknown_tool_rejected(self):
        with pytest.raises(ValueError, match="unknown tool"):
            parse_tool_call('{"tool":"teleport","entity":"x"}')

    def test_no_json_rejected(self):
        with pytest.raises(ValueError):
            parse_tool_call("I have no idea.")


class TestLLMPolicyEpisodes:
    def test_scripted_three_step_episode(self):
        g = KnowledgeGraph(
            [
                ("Ian Holm", "spouse", "Penelope Wilton"),
                ("Ian Holm", "awardNominee", "Cate Blanchett"),
            ]
        )
        client = ScriptedClient(
            [
                '{"tool":"relation_path_mining","entity":"Ian Holm","max_hops":1}',
                '{"tool":"path_grounding","entity":"Ian Holm","relation_paths":["spouse"]}',
                '{"tool":"complete_task","explored_reasoning_paths":'
                '["(Ian Holm, spouse, Penelope Wilton)"],"answer_entities":["Penelope Wilton"]}',
            ]
        )
        question = q("i1", "Who is Ian Holm's spouse?", "Ian Holm")
        policy = LLMPolicy(question["question"], "Ian Holm", client)
        trace = run_episode(g, question, policy)
        assert trace.prediction == ["Penelope Wilton"]
        assert trace.termination == "synthesized"
        # system prompt and the three tool payloads ride along every turn
        system = client.requests[0][0]
        assert system["role"] == "system"
        assert "relation_path_mining" in system["content"]
        user = client.requests[0][1]["content"]
        assert "Mine relation paths" in user
        assert "Ground relation paths" in user
        assert "Complete the knowledge graph exploration" in user

    def test_unparseable_response_repaired_once(self):
        g = KnowledgeGraph([("a", "p", "b")])
        client = ScriptedClient(
            [
                "gibberish with no tool call",
                '{"tool":"relation_path_mining","entity":"a","max_hops":1}',
                '{"tool":"complete_task","explored_reasoning_paths":[],"answer_entities":[]}',
            ]
        )
        question = q("r1", "anything about a?", "a")
        policy = LLMPolicy(question["question"], "a", client)
        trace = run_episode(g, question, policy)
        assert trace.steps[0]["action"]["kind"] == "explore"
        assert any("repair" in e for e in trace.steps[0]["events"])

    def test_two_unparseable_responses_abort(self):
        g = KnowledgeGraph([("a", "p", "b")])
        client = ScriptedClient(["nope", "still nope"])
        question = q("r2", "anything?", "a")
        policy = LLMPolicy(question["question"], "a", client)
        trace = run_episode(g, question, policy)
        assert trace.termination == "aborted"
        assert trace.prediction == []

    def test_premature_synthesis_with_answers_but_no_evidence_repaired(self):
        g = KnowledgeGraph([("a", "p", "b")])
        client = ScriptedClient(
            [
                '{"tool":"complete_task","explored_reasoning_paths":[],"answer_entities":["b"]}',
                '{"tool":"relation_path_mining","entity":"a","max_hops":1}',
                '{"tool":"complete_task","explored_reasoning_paths":[],"answer_entities":[]}',
            ]
        )
        question = q("p1", "what is p of a?", "a")
        policy = LLMPolicy(question["question"], "a", client)
        trace = run_episode(g, question, policy)
        assert trace.steps[0]["action"]["kind"] == "explore"
        assert any("repair" in e for e in trace.steps[0]["events"])

    def test_endpoint_budget_exhaustion_terminates_with_fallback(self):
        g = KnowledgeGraph([("a", "p", "b")])
        client = ScriptedClient(
            ['{"tool":"relation_path_mining","entity":"a","max_hops":1}'] * 3,
            max_calls=1,
        )
        question = q("e1", "what?", "a")
        policy = LLMPolicy(question["question"], "a", client)
        trace = run_episode(g, question, policy)
        assert trace.termination == "budget"
        assert trace.fallback


class TestTraces:
    def run_one(self, celebrity_family):
        question = q("t1", "Who is Justin Bieber's parent?", "Justin Bieber")
        policy = HeuristicPolicy(question["question"], "Justin Bieber", max_hops=3)
        return run_episode(celebrity_family, question, policy)

    def test_replay_byte_for_byte(self, celebrity_family):
        trace = self.run_one(celebrity_family)
        assert replay_trace(celebrity_family, trace)

    def test_replay_detects_graph_change(self, celebrity_family):
        trace = self.run_one(celebrity_family)
        mutated = celebrity_family.remove([("Justin Bieber", "hasParent", "Jeremy Bieber")])
        with pytest.raises(AssertionError):
            replay_trace(mutated, trace)

    def test_json_lines_roundtrip(self, celebrity_family):
        trace = self.run_one(celebrity_family)
        lines = trace.to_json_lines()
        parsed = [json.loads(line) for line in lines]
        assert parsed[0]["type"] == "start"
        assert parsed[-1]["type"] == "final"
        again = EpisodeTrace.from_json_lines(parsed)
        assert again == trace
        assert replay_trace(celebrity_family, again)
