"""Gateway modes: stub rules, fixture replay, live retry/recording semantics."""

import json
import math

import pytest
import requests

from toolweave.errors import (
    EmptyText,
    FixtureFormatError,
    GatewayTimeout,
    MissingFixture,
    ProviderHttpError,
)
from toolweave.gateway import (
    FixtureEntry,
    Gateway,
    GatewayConfig,
    GatewayRequest,
    Mode,
    Role,
    embedding_buckets,
    load_fixtures,
    merge_fixtures,
    request_for,
    save_fixtures,
    stub_embedding,
)
from toolweave.schemas import canonical_json


def cosine(a, b):
    return sum(x * y for x, y in zip(a, b))


class TestFingerprint:
    def test_stable_across_instances(self):
        a = request_for(Role.JUDGE, "payload")
        b = request_for("judge", "payload")
        assert a.fingerprint == b.fingerprint
        assert len(a.fingerprint) == 64

    def test_sensitive_to_role_and_payload(self):
        base = request_for(Role.JUDGE, "payload")
        assert base.fingerprint != request_for(Role.PROPOSE, "payload").fingerprint
        assert base.fingerprint != request_for(Role.JUDGE, "other").fingerprint


class TestStubEmbedding:
    def test_deterministic(self):
        assert stub_embedding("abc", 256) == stub_embedding("abc", 256)

    def test_self_cosine_one(self):
        v = stub_embedding("abc", 256)
        assert math.isclose(cosine(v, v), 1.0, abs_tol=1e-9)

    def test_disjoint_gram_buckets_give_zero_cosine(self):
        a, b = "alpha beta", "zyx qvo"
        assert not (embedding_buckets(a, 256) & embedding_buckets(b, 256))
        assert cosine(stub_embedding(a, 256), stub_embedding(b, 256)) == 0.0

    def test_short_text_embeds(self):
        v = stub_embedding("ab", 256)
        assert math.isclose(cosine(v, v), 1.0, abs_tol=1e-9)

    def test_empty_text_rejected(self):
        with pytest.raises(EmptyText):
            stub_embedding("", 256)

    def test_gateway_embed_returns_json_vector(self):
        gw = Gateway(Mode.STUB)
        out = gw.complete(request_for(Role.EMBED, "hello world"))
        vec = json.loads(out)
        assert len(vec) == 256
        assert math.isclose(sum(x * x for x in vec), 1.0, rel_tol=1e-9)


def tool_record(name, payload_fields=(), args=()):
    return {
        "name": name,
        "description": f"{name} tool",
        "arguments": [{"name": n, "type": t} for n, t in args],
        "output_payload": [{"name": n, "type": t} for n, t in payload_fields],
    }


class TestStubPropose:
    def test_name_and_type_match(self):
        payload = canonical_json(
            {
                "source": tool_record("get_order", payload_fields=[("order_id", "string")]),
                "target": tool_record("cancel_order", args=[("order_id", "string")]),
            }
        )
        out = Gateway(Mode.STUB).complete(request_for(Role.PROPOSE, payload))
        candidates = json.loads(out)["candidates"]
        assert candidates == [
            {
                "output_field": "order_id",
                "input_argument": "order_id",
                "rationale": "output 'order_id' feeds argument 'order_id'",
                "confidence": 1.0,
            }
        ]

    def test_type_mismatch_yields_nothing(self):
        payload = canonical_json(
            {
                "source": tool_record("a", payload_fields=[("user_id", "string")]),
                "target": tool_record("b", args=[("user_id", "integer")]),
            }
        )
        out = Gateway(Mode.STUB).complete(request_for(Role.PROPOSE, payload))
        assert json.loads(out)["candidates"] == []

    def test_unknown_type_is_wildcard(self):
        payload = canonical_json(
            {
                "source": tool_record("a", payload_fields=[("user_id", None)]),
                "target": tool_record("b", args=[("user_id", "integer")]),
            }
        )
        out = Gateway(Mode.STUB).complete(request_for(Role.PROPOSE, payload))
        assert len(json.loads(out)["candidates"]) == 1


class TestStubJudge:
    def test_accept_on_exact_match(self):
        payload = canonical_json(
            {
                "source_tool": "a",
                "target_tool": "b",
                "output_field": "order_id",
                "input_argument": "order_id",
                "output_type": "string",
                "input_type": "string",
            }
        )
        assert Gateway(Mode.STUB).complete(request_for(Role.JUDGE, payload)) == "accept"

    def test_reject_on_type_clash(self):
        payload = canonical_json(
            {
                "source_tool": "a",
                "target_tool": "b",
                "output_field": "order_id",
                "input_argument": "order_id",
                "output_type": "string",
                "input_type": "integer",
            }
        )
        assert Gateway(Mode.STUB).complete(request_for(Role.JUDGE, payload)) == "reject"


class TestStubGenerate:
    BUNDLE = (
        "QUERY: cancel my order with cancel_order\n"
        "TRIPLETS:\n"
        "get_order —can_use_this_tool_output→ cancel_order: fetch / cancel\n"
        "lookup_user —can_use_this_tool_output→ get_order: who / fetch\n"
        "unrelated —can_use_this_tool_output→ other: x / y\n"
        "PASSAGES:\n"
        "[d:0] some text\n"
    )

    def test_plans_closure_of_query_tools(self):
        out = Gateway(Mode.STUB).complete(request_for(Role.GENERATE, self.BUNDLE))
        steps = json.loads(out)["steps"]
        assert [s["tool"] for s in steps] == ["cancel_order"]

    def test_forward_closure_includes_downstream(self):
        bundle = self.BUNDLE.replace("QUERY: cancel my order with cancel_order", "QUERY: need lookup_user data")
        out = Gateway(Mode.STUB).complete(request_for(Role.GENERATE, bundle))
        steps = json.loads(out)["steps"]
        assert [s["tool"] for s in steps] == ["lookup_user", "get_order", "cancel_order"]
        assert steps[1]["depends_on"] == [1]
        assert steps[2]["depends_on"] == [2]

    def test_no_match_empty_plan(self):
        bundle = self.BUNDLE.replace("QUERY: cancel my order with cancel_order", "QUERY: nothing relevant")
        out = Gateway(Mode.STUB).complete(request_for(Role.GENERATE, bundle))
        assert json.loads(out)["steps"] == []


class TestStubPlanJudge:
    def run(self, artifact, gold):
        payload = canonical_json({"artifact": artifact, "gold": gold})
        return Gateway(Mode.STUB).complete(request_for(Role.PLAN_JUDGE, payload))

    def test_exact_match_scores_two(self):
        assert self.run(
            {"tools": ["a", "b"], "dependencies": [["a", "b"]]},
            {"tools": ["a", "b"], "dependencies": [["a", "b"]]},
        ) == "2"

    def test_half_coverage_scores_one(self):
        assert self.run(
            {"tools": ["a"], "dependencies": []},
            {"tools": ["a", "b"], "dependencies": []},
        ) == "1"

    def test_missing_gold_dependency_is_not_exact(self):
        assert self.run(
            {"tools": ["a", "b"], "dependencies": []},
            {"tools": ["a", "b"], "dependencies": [["a", "b"]]},
        ) != "2"

    def test_no_overlap_scores_zero(self):
        assert self.run(
            {"tools": ["x"], "dependencies": []},
            {"tools": ["a", "b"], "dependencies": []},
        ) == "0"


class TestFixtures:
    def entry(self, role=Role.JUDGE, response="accept"):
        return FixtureEntry(role=role, response=response, metadata=(("model", "m1"),))

    def test_round_trip(self, tmp_path):
        path = tmp_path / "fx.jsonl"
        fixtures = {"ff" * 32: self.entry(), "aa" * 32: self.entry(Role.EMBED, "[1.0]")}
        save_fixtures(path, fixtures)
        assert load_fixtures(path) == fixtures

    def test_save_is_byte_stable(self, tmp_path):
        path = tmp_path / "fx.jsonl"
        fixtures = {"ff" * 32: self.entry(), "aa" * 32: self.entry(Role.EMBED, "[1.0]")}
        save_fixtures(path, fixtures)
        first = path.read_bytes()
        save_fixtures(path, load_fixtures(path))
        assert path.read_bytes() == first

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "fx.jsonl"
        path.write_text('{"fingerprint": "x"}\n', encoding="utf-8")
        with pytest.raises(FixtureFormatError):
            load_fixtures(path)

    def test_merge_later_wins(self):
        old = {"k": self.entry(response="old")}
        new = {"k": self.entry(response="new"), "j": self.entry()}
        merged = merge_fixtures(old, new)
        assert merged["k"].response == "new"
        assert set(merged) == {"k", "j"}


class TestReplay:
    def test_known_fingerprint_verbatim(self):
        request = request_for(Role.JUDGE, "anything")
        gw = Gateway(
            Mode.REPLAY,
            fixtures={request.fingerprint: FixtureEntry(Role.JUDGE, "recorded text")},
        )
        assert gw.complete(request) == "recorded text"

    def test_unknown_fingerprint_raises(self):
        gw = Gateway(Mode.REPLAY, fixtures={})
        with pytest.raises(MissingFixture):
            gw.complete(request_for(Role.JUDGE, "anything"))

    def test_zero_network(self):
        # Transport raising proves replay never touches it.
        def explode(body):
            raise AssertionError("network touched in replay mode")

        request = request_for(Role.JUDGE, "x")
        gw = Gateway(
            Mode.REPLAY,
            fixtures={request.fingerprint: FixtureEntry(Role.JUDGE, "ok")},
            transport=explode,
        )
        assert gw.complete(request) == "ok"

    def test_stub_mode_also_offline(self):
        def explode(body):
            raise AssertionError("network touched in stub mode")

        gw = Gateway(Mode.STUB, transport=explode)
        assert gw.complete(request_for(Role.JUDGE, canonical_json(
            {"output_field": "a", "input_argument": "a", "output_type": "string", "input_type": "string"}
        ))) == "accept"


class TestLive:
    def config(self):
        return GatewayConfig(endpoint="http://example.invalid", model="m", backoff_base=0.0)

    def test_retries_5xx_then_succeeds(self):
        calls = []

        def transport(body):
            calls.append(body)
            if len(calls) < 3:
                return 500, "server broke"
            return 200, json.dumps({"outputs": ["fine"]})

        gw = Gateway(Mode.LIVE, config=self.config(), transport=transport, sleep=lambda s: None)
        assert gw.complete(request_for(Role.GENERATE, "p")) == "fine"
        assert len(calls) == 3

    def test_exhausted_retries_raise_last_error(self):
        gw = Gateway(
            Mode.LIVE,
            config=self.config(),
            transport=lambda body: (503, "down"),
            sleep=lambda s: None,
        )
        with pytest.raises(ProviderHttpError) as exc:
            gw.complete(request_for(Role.GENERATE, "p"))
        assert exc.value.status == 503

    def test_4xx_fails_fast(self):
        calls = []

        def transport(body):
            calls.append(body)
            return 401, "bad key"

        gw = Gateway(Mode.LIVE, config=self.config(), transport=transport, sleep=lambda s: None)
        with pytest.raises(ProviderHttpError):
            gw.complete(request_for(Role.GENERATE, "p"))
        assert len(calls) == 1

    def test_timeout_surfaces(self):
        def transport(body):
            raise requests.Timeout()

        gw = Gateway(Mode.LIVE, config=self.config(), transport=transport, sleep=lambda s: None)
        with pytest.raises(GatewayTimeout):
            gw.complete(request_for(Role.GENERATE, "p"))

    def test_record_then_replay_reproduces(self, tmp_path):
        def transport(body):
            return 200, json.dumps({"outputs": [f"answer to {body['inputs'][0]}"]})

        gw = Gateway(Mode.LIVE, config=self.config(), transport=transport)
        request = request_for(Role.GENERATE, "question")
        live_answer = gw.complete(request)
        path = tmp_path / "fx.jsonl"
        gw.save_recorded(path)

        replayer = Gateway(Mode.REPLAY, fixtures=load_fixtures(path))
        assert replayer.complete(request) == live_answer

    def test_env_overrides(self, monkeypatch):
        monkeypatch.setenv("TOOLWEAVE_ENDPOINT", "http://override.invalid")
        monkeypatch.setenv("TOOLWEAVE_API_KEY", "sekrit")
        seen = {}

        def transport(body):
            return 200, json.dumps({"outputs": ["ok"]})

        gw = Gateway(Mode.LIVE, config=self.config(), transport=transport)
        assert gw.config.endpoint == "http://override.invalid"
        assert gw.config.api_key == "sekrit"
