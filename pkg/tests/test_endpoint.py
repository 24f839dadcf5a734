import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from kgreason.bench import GenConfig, build_bundle, generate_question
from kgreason.kg import KnowledgeGraph
from kgreason.llm import (
    API_TOKEN_VAR,
    ENDPOINT_URL_VAR,
    EndpointError,
    LLMClient,
    extract_text,
)
from kgreason.mining import MinerConfig, mine, write_rules_jsonl


class FakeEndpoint:
    """Tiny chat endpoint; the reply function sees the request body."""

    def __init__(self, reply):
        self.reply = reply
        self.requests = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers["Content-Length"])
                body = json.loads(self.rfile.read(length))
                outer.requests.append(
                    {"body": body, "auth": self.headers.get("Authorization")}
                )
                status, payload = outer.reply(body)
                data = json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.server = HTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    @property
    def url(self):
        return f"http://127.0.0.1:{self.server.server_port}/chat"

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def canned():
    def make(reply):
        ep = FakeEndpoint(reply)
        endpoints.append(ep)
        return ep

    endpoints = []
    yield make
    for ep in endpoints:
        ep.close()


def openai_style(text):
    return 200, {"choices": [{"message": {"content": text}}]}


class TestClient:
    def test_chat_roundtrip_with_auth(self, canned, monkeypatch):
        ep = canned(lambda body: openai_style("hello"))
        monkeypatch.setenv(ENDPOINT_URL_VAR, ep.url)
        monkeypatch.setenv(API_TOKEN_VAR, "sekret")
        client = LLMClient()
        out = client.chat([{"role": "user", "content": "hi"}], temperature=0.0)
        assert out == "hello"
        sent = ep.requests[0]
        assert sent["auth"] == "Bearer sekret"
        assert sent["body"]["temperature"] == 0.0
        assert sent["body"]["messages"][0]["content"] == "hi"

    def test_missing_endpoint_config(self, monkeypatch):
        monkeypatch.delenv(ENDPOINT_URL_VAR, raising=False)
        with pytest.raises(ValueError, match=ENDPOINT_URL_VAR):
            LLMClient()

    def test_server_errors_are_retried(self, canned):
        state = {"n": 0}

        def flaky(body):
            state["n"] += 1
            if state["n"] < 3:
                return 500, {"error": "boom"}
            return openai_style("recovered")

        ep = canned(flaky)
        client = LLMClient(base_url=ep.url, retries=2, backoff=0.01)
        assert client.chat([{"role": "user", "content": "x"}]) == "recovered"

    def test_persistent_failure_raises(self, canned):
        ep = canned(lambda body: (500, {"error": "down"}))
        client = LLMClient(base_url=ep.url, retries=1, backoff=0.01)
        with pytest.raises(EndpointError):
            client.chat([{"role": "user", "content": "x"}])

    def test_extract_text_shapes(self):
        assert extract_text({"choices": [{"message": {"content": "a"}}]}) == "a"
        assert extract_text({"choices": [{"text": "b"}]}) == "b"
        assert extract_text({"message": {"content": "c"}}) == "c"
        assert extract_text({"content": "d"}) == "d"
        assert extract_text({"text": "e"}) == "e"
        with pytest.raises(EndpointError):
            extract_text({"unrelated": 1})


class TestExternalQuestionBackend:
    def test_prompt_filled_and_question_returned(self, canned):
        ep = canned(lambda body: openai_style("Who is Carol's wife?"))
        client = LLMClient(base_url=ep.url)
        question, topic, prov = generate_question(
            ("Alice", "wife_of", "Carol"), "object", backend="external", client=client
        )
        assert question == "Who is Carol's wife?"
        assert topic == "Carol"
        assert prov["backend"] == "external"
        assert prov["retries"] == 0 and not prov["fallback"]
        prompt = ep.requests[0]["body"]["messages"][0]["content"]
        assert 'Removed Triple: (Alice, wife_of, Carol)' in prompt
        assert "Do not mention the Answer Entity Alice" in prompt
        assert ep.requests[0]["body"]["temperature"] == 0.0

    def test_answer_leak_falls_back_to_template_after_retry(self, canned):
        ep = canned(lambda body: openai_style("Is Alice the wife of Carol?"))
        client = LLMClient(base_url=ep.url)
        question, topic, prov = generate_question(
            ("Alice", "wife_of", "Carol"), "object", backend="external", client=client
        )
        assert prov["fallback"]
        assert prov["retries"] == 2
        assert "Alice" not in question
        assert "wife_of" in question  # template fallback

    def test_leak_check_is_whole_token(self, canned):
        # answer id "5" appearing inside "15" is not a leak
        ep = canned(lambda body: openai_style("Which of 15's relatives is their parent?"))
        client = LLMClient(base_url=ep.url)
        question, _, prov = generate_question(
            ("15", "parentOf", "5"), "subject", backend="external", client=client
        )
        assert question == "Which of 15's relatives is their parent?"
        assert not prov["fallback"]


class TestBenchWithEndpoint:
    def _rules(self, tmp_path, g):
        mined = mine(g, MinerConfig(min_confidence=0.9, max_rule_length=3))
        path = tmp_path / "rules.jsonl"
        write_rules_jsonl(mined, path)
        return path

    def test_unreachable_endpoint_fails_before_writing(self, tmp_path, uncle_world_file, monkeypatch):
        monkeypatch.setenv(ENDPOINT_URL_VAR, "http://127.0.0.1:1/chat")
        g = KnowledgeGraph.load(uncle_world_file)
        rules = self._rules(tmp_path, g)
        out = tmp_path / "bundle"
        cfg = GenConfig(seed=1, question_backend="external")
        client = LLMClient(base_url="http://127.0.0.1:1/chat", retries=0, backoff=0.01)
        with pytest.raises(EndpointError, match="before removal"):
            build_bundle(uncle_world_file, rules, out, cfg, client=client)
        assert not (out / "removals.jsonl").exists()
        assert not (out / "incomplete.tsv").exists()

    def test_external_backend_builds_bundle(self, tmp_path, uncle_world_file, canned):
        def reply(body):
            content = body["messages"][0]["content"]
            if "ready" in content:
                return openai_style("ready")
            # parrot a safe question naming the topic only
            topic = content.split("Question Entity: ")[1].splitlines()[0]
            return openai_style(f"Which relative is linked to {topic} here?")

        ep = canned(reply)
        g = KnowledgeGraph.load(uncle_world_file)
        rules = self._rules(tmp_path, g)
        out = tmp_path / "bundle"
        cfg = GenConfig(seed=1, question_backend="external", groundings_per_rule=2)
        client = LLMClient(base_url=ep.url)
        manifest = build_bundle(uncle_world_file, rules, out, cfg, client=client)
        assert manifest["counts"]["questions_final"] >= 1
        rows = [
            json.loads(line) for line in (out / "questions.jsonl").read_text().splitlines()
        ]
        assert all(r["provenance"]["backend"] == "external" for r in rows)
