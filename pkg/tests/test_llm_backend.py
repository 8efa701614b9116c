import json

import httpx
import pytest
from hypothesis import given

from conftest import script_text, scripts
from simt.errors import GenerationOverflow, PreconditionError, TransientError
from simt.llm_backend import (EOT_MARK, Carry, CompletionClient, EndOfTurn, GenerationRequest,
                              ScriptBook, ScriptedBackend, TokenEvent, Word, complete_to_end,
                              complete_word, split_word)

P = "prompt"


def boundary_oracle(fragments):
    """Reference word splitter: join everything, then split on whitespace."""
    return "".join(fragments).split()


def test_word_split_across_fragments():
    be = ScriptedBackend(["Vor", "zeitige", " Wahlen"])
    word, carry = complete_word(be, P)
    assert word == Word("Vorzeitige")
    assert carry == Carry(" Wahlen")
    assert be.position == 3


def test_immediate_end_of_turn():
    word, carry = complete_word(ScriptedBackend([EOT_MARK]), P)
    assert word is EndOfTurn and carry == Carry()


def test_punctuation_stays_attached():
    frags = ["Hallo", ",", " wie"]
    word, _ = complete_word(ScriptedBackend(frags), P)
    assert word.text == boundary_oracle(frags)[0] == "Hallo,"


def test_carry_is_reinjected_into_prompt():
    be = ScriptedBackend(["Vor", "zeitige", " Wahlen", " werden"])
    _, carry = complete_word(be, P)
    word, carry = complete_word(be, P + " Vorzeitige", carry)
    assert word.text == "Wahlen"
    assert be.prompts[-1] == P + " Vorzeitige" + " Wahlen"


def test_carry_with_full_word_skips_backend():
    be = ScriptedBackend([])
    word, carry = complete_word(be, P, Carry(" a b c"))
    assert word.text == "a" and carry.text == " b c"
    assert be.prompts == []


def test_end_of_turn_after_partial_word_is_replayed():
    be = ScriptedBackend([" gut", EOT_MARK])
    word, carry = complete_word(be, P)
    assert word.text == "gut" and carry.end_of_turn
    nxt, carry = complete_word(be, P, carry)
    assert nxt is EndOfTurn and carry == Carry()


def test_overflow():
    be = ScriptedBackend(["x"] * 30)
    with pytest.raises(GenerationOverflow):
        complete_word(be, P, max_new_tokens=24)
    assert be.position == 24


def test_empty_prompt_rejected():
    with pytest.raises(PreconditionError):
        complete_word(ScriptedBackend([]), "")


def test_complete_to_end_examples():
    assert complete_to_end(ScriptedBackend([" ist", " gut", EOT_MARK]), P) == ("ist gut", False)
    assert complete_to_end(ScriptedBackend([EOT_MARK]), P) == ("", False)
    frags = [" Gu", "ten", " Tag", EOT_MARK]
    text, _ = complete_to_end(ScriptedBackend(frags), P)
    assert text.split() == boundary_oracle(frags[:-1])


def test_complete_to_end_truncation():
    text, truncated = complete_to_end(ScriptedBackend([" a"] * 10), P, max_new_tokens=4)
    assert truncated and text == "a a a a"


def test_request_validation():
    with pytest.raises(PreconditionError):
        GenerationRequest("p", 5, temperature=0.7)
    with pytest.raises(PreconditionError):
        GenerationRequest("p", 0)
    with pytest.raises(ValueError):
        TokenEvent("eot", "x")


def test_split_word():
    assert split_word("   ") is None
    assert split_word(" abc") is None
    assert split_word(" abc\ndef") == ("abc", "\ndef")


@given(scripts())
def test_concatenation_property(script):
    be = ScriptedBackend(script)
    words, carry = [], Carry()
    # drive until the first end of turn that is not preceded by a pending word,
    # then finish with complete_to_end
    for _ in range(200):
        res, carry = complete_word(be, P, carry)
        if res is EndOfTurn:
            if be.position >= len(be.events):
                break
            continue
        assert not any(c.isspace() for c in res.text) and res.text
        words.append(res.text)
    tail, _ = complete_to_end(be, P, carry)
    joined = " ".join(words + ([tail] if tail else []))
    assert joined == script_text(script)


@given(scripts())
def test_greedy_determinism(script):
    def run():
        be = ScriptedBackend(script)
        out, carry = [], Carry()
        for _ in range(40):
            res, carry = complete_word(be, P, carry)
            out.append(res if res is EndOfTurn else res.text)
        return out
    assert run() == run()


def test_script_book_roundtrip(tmp_path):
    book = ScriptBook({"a": ["x", EOT_MARK]})
    book.dump(tmp_path / "s.json")
    again = ScriptBook.load(tmp_path / "s.json")
    assert again.scripts == book.scripts
    assert again.for_session("missing").events == []


def _sse(chunks):
    lines = [f"data: {json.dumps(c)}\n\n" for c in chunks] + ["data: [DONE]\n\n"]
    return "".join(lines).encode()


def test_completion_client_streaming_wire_format():
    seen = {}

    def handler(request: httpx.Request):
        if request.url.path == "/v1/models":
            return httpx.Response(200, json={"data": []})
        seen.update(json.loads(request.content))
        body = _sse([{"choices": [{"text": "Vor", "finish_reason": None}]},
                     {"choices": [{"text": "zeitige", "finish_reason": None}]},
                     {"choices": [{"text": " Wahlen", "finish_reason": None}]},
                     {"choices": [{"text": "", "finish_reason": "stop"}]}])
        return httpx.Response(200, content=body, headers={"content-type": "text/event-stream"})

    client = CompletionClient("http://llm", "m", client=httpx.Client(transport=httpx.MockTransport(handler)))
    client.ping()
    word, carry = complete_word(client, "PROMPT")
    assert word.text == "Vorzeitige"
    assert seen["prompt"] == "PROMPT" and seen["temperature"] == 0
    assert seen["max_tokens"] == 24 and seen["stop"] == [EOT_MARK] and seen["stream"] is True
    text, truncated = complete_to_end(client, "PROMPT")
    assert (text, truncated) == ("Vorzeitige Wahlen", False)


def test_completion_client_whole_response():
    def handler(request):
        return httpx.Response(200, json={"choices": [{"text": " ist gut", "finish_reason": "stop"}]})

    client = CompletionClient("http://llm", "m", streaming=False,
                              client=httpx.Client(transport=httpx.MockTransport(handler)))
    assert complete_to_end(client, "p") == ("ist gut", False)
    assert complete_word(client, "p")[0].text == "ist"
    assert client.complete("p") == " ist gut"


def test_completion_client_length_stop_is_overflow():
    def handler(request):
        return httpx.Response(200, json={"choices": [{"text": "aaaa", "finish_reason": "length"}]})

    client = CompletionClient("http://llm", "m", streaming=False,
                              client=httpx.Client(transport=httpx.MockTransport(handler)))
    with pytest.raises(GenerationOverflow):
        complete_word(client, "p")


def test_completion_client_transport_error():
    def handler(request):
        raise httpx.ConnectError("refused")

    client = CompletionClient("http://llm", "m", client=httpx.Client(transport=httpx.MockTransport(handler)))
    with pytest.raises(TransientError):
        client.ping()
    with pytest.raises(TransientError):
        complete_word(client, "p")
