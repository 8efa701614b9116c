"""Prompt rendering, background documents and background extraction.

Rendered layout (Llama-3 markers by default)::

    <begin><hdr>system</hdr>
    SYSTEM MESSAGE (with the background document inlined when present)
    <eot><hdr>user</hdr>
    Context: PARTIAL SOURCE
    <eot><hdr>assistant</hdr>
    German translation: PARTIAL TARGET

With response priming the prompt ends exactly at the last character of the
partial target, so the model can only continue the translation.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

from .errors import (BackgroundParseError, BackgroundSchemaError, ExtractionError,
                     PreconditionError)

DEFAULT_SYSTEM_MESSAGE = (
    "You are a conference interpreter. {background}"
    "Taking into account the original {src_lang} text, complete its translation "
    "into {tgt_lang}. Do not add any notes or comments to the translation."
)
BACKGROUND_CLAUSE = "As you translate, you can use the following background information: {document}. "


@dataclass(frozen=True)
class ChatTemplate:
    begin_marker: str = "<|begin_of_text|>"
    header_open: str = "<|start_header_id|>"
    header_close: str = "<|end_header_id|>"
    turn_end: str = "<|eot_id|>"
    system_role: str = "system"
    user_role: str = "user"
    assistant_role: str = "assistant"

    def __post_init__(self):
        markers = [self.begin_marker, self.header_open, self.header_close, self.turn_end]
        if not all(markers):
            raise ValueError("template markers must be non-empty")
        if len(set(markers)) != len(markers):
            raise ValueError("template markers must be pairwise distinct")

    def header(self, role: str) -> str:
        return f"{self.header_open}{role}{self.header_close}\n"


LLAMA3 = ChatTemplate()


@dataclass(frozen=True)
class NamedEntity:
    entity: str
    description: str = ""


@dataclass(frozen=True)
class BackgroundInfo:
    topic: str
    named_entities: tuple[NamedEntity, ...] = ()

    def __post_init__(self):
        seen = set()
        for ne in self.named_entities:
            if not ne.entity:
                raise BackgroundSchemaError("entity names must be non-empty")
            if ne.entity in seen:
                raise BackgroundSchemaError(f"duplicate entity {ne.entity!r}")
            seen.add(ne.entity)

    def to_dict(self) -> dict:
        return {"topic": self.topic,
                "named_entities": [{"entity": ne.entity, "description": ne.description}
                                   for ne in self.named_entities]}

    def to_json(self, *, indent: int | None = None) -> str:
        if indent is None:
            return json.dumps(self.to_dict(), ensure_ascii=False, separators=(",", ":"))
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=indent)


@dataclass(frozen=True)
class PromptSpec:
    src_lang: str
    tgt_lang: str
    partial_source: tuple[str, ...]
    partial_target: tuple[str, ...] = ()
    background: BackgroundInfo | None = None
    priming_enabled: bool = True
    system_message: str = DEFAULT_SYSTEM_MESSAGE


def render_system_message(spec: PromptSpec) -> str:
    bg = ""
    if spec.background is not None:
        bg = BACKGROUND_CLAUSE.format(document=spec.background.to_json())
    return spec.system_message.format(background=bg, src_lang=spec.src_lang,
                                      tgt_lang=spec.tgt_lang)


def render_prompt(spec: PromptSpec, template: ChatTemplate = LLAMA3) -> str:
    if not spec.partial_source:
        raise PreconditionError("partial source must be non-empty")
    t = template
    user = "Context: " + " ".join(spec.partial_source)
    target_line = f"{spec.tgt_lang} translation: " + " ".join(spec.partial_target)
    if spec.priming_enabled:
        assistant = target_line
    else:
        user = f"{user}\n{target_line}"
        assistant = ""
    return (
        t.begin_marker
        + t.header(t.system_role) + render_system_message(spec) + "\n" + t.turn_end
        + t.header(t.user_role) + user + "\n" + t.turn_end
        + t.header(t.assistant_role) + assistant
    )


def prompt_regions(prompt: str, template: ChatTemplate = LLAMA3) -> dict[str, str]:
    """Split a rendered prompt into its system, user and assistant bodies."""
    t = template
    out = {}
    rest = prompt
    if not rest.startswith(t.begin_marker):
        raise ValueError("prompt does not start with the begin marker")
    rest = rest[len(t.begin_marker):]
    for role in (t.system_role, t.user_role, t.assistant_role):
        head = t.header(role)
        if not rest.startswith(head):
            raise ValueError(f"missing {role} header")
        rest = rest[len(head):]
        if role == t.assistant_role:
            out[role] = rest
        else:
            body, sep, rest = rest.partition("\n" + t.turn_end)
            if not sep:
                raise ValueError(f"unterminated {role} turn")
            out[role] = body
    return out


def _strip_trailing_commas(text: str) -> str:
    """Remove commas directly before a closing bracket, outside of strings."""
    out = []
    in_str = esc = False
    i = 0
    while i < len(text):
        c = text[i]
        if in_str:
            out.append(c)
            if esc:
                esc = False
            elif c == "\\":
                esc = True
            elif c == '"':
                in_str = False
        elif c == '"':
            in_str = True
            out.append(c)
        elif c == ",":
            j = i + 1
            while j < len(text) and text[j].isspace():
                j += 1
            if j >= len(text) or text[j] not in "]}":
                out.append(c)
        else:
            out.append(c)
        i += 1
    return "".join(out)


def _from_obj(obj) -> BackgroundInfo:
    if not isinstance(obj, dict):
        raise BackgroundSchemaError("background document must be a JSON object")
    topic = obj.get("topic")
    if not isinstance(topic, str) or not topic.strip():
        raise BackgroundSchemaError("missing or empty 'topic'")
    raw = obj.get("named_entities", [])
    if not isinstance(raw, list):
        raise BackgroundSchemaError("'named_entities' must be a list")
    entities = []
    for item in raw:
        if not isinstance(item, dict) or not isinstance(item.get("entity"), str):
            raise BackgroundSchemaError(f"bad named entity: {item!r}")
        desc = item.get("description", "")
        entities.append(NamedEntity(item["entity"], desc if isinstance(desc, str) else str(desc)))
    return BackgroundInfo(topic, tuple(entities))


def load_background(document: str) -> BackgroundInfo:
    """Parse a background JSON document. Trailing commas are tolerated."""
    try:
        obj = json.loads(document)
    except json.JSONDecodeError as first:
        try:
            obj = json.loads(_strip_trailing_commas(document))
        except json.JSONDecodeError:
            raise BackgroundParseError(first.msg, first.lineno, first.colno) from None
    return _from_obj(obj)


EXTRACTION_INSTRUCTION = (
    "Please extract the topic and named entities (which are either proper names, "
    "technical terms or acronyms) from the following text, and return them as a JSON "
    "object with the following fields: topic, named_entities({entity, description}). "
    "For example:"
)

EXTRACTION_EXAMPLE = BackgroundInfo(
    "Climate Crisis and Fossil Fuel Industry's Influence",
    tuple(NamedEntity(e, d) for e, d in [
        ("troposphere", "the lowest part of the atmosphere"),
        ("gravity-measuring satellite", "satellite used to observe water surpluses and deficits"),
        ("Inflation Reduction Act", "U.S. legislation aimed at addressing climate change"),
        ("fossil fuel industry", "industry opposing climate legislation"),
        ("UN Secretary General",
         "stated fossil fuel industry is the 'polluted heart' of climate crisis"),
        ("COP process", "Conference of the Parties, climate change conferences"),
        ("COP28", "upcoming climate conference hosted by UAE"),
        ("Sultan Al Jaber", "CEO of Abu Dhabi National Oil Company and president of COP28"),
        ("Paris Agreement", "international treaty on climate change"),
        # truncated after "93"; the prompt is used verbatim
        ("Chevron", "company with 93"),
        ("World Bank", "institution needing reform to aid developing countries"),
        ("gigafactory", "large factory for producing batteries and renewable energy components"),
        ("Drew Shindell", "researcher on CO2 reduction timelines"),
    ]),
)

_EXTRACTION_HEAD = EXTRACTION_INSTRUCTION + "\n\n" + EXTRACTION_EXAMPLE.to_json(indent=2) + "\n\n"


def build_extraction_prompt(full_text: str) -> str:
    if not full_text.strip():
        raise PreconditionError("text to extract from is empty")
    return _EXTRACTION_HEAD + full_text


def wrap_user_turn(text: str, template: ChatTemplate = LLAMA3) -> str:
    """Wrap a plain instruction as a single user turn for raw completion endpoints."""
    t = template
    return (t.begin_marker + t.header(t.user_role) + text + "\n" + t.turn_end
            + t.header(t.assistant_role))


_FENCE = re.compile(r"```(?:json)?\s*\n(.*?)```", re.DOTALL)


def parse_extraction_response(response: str) -> BackgroundInfo:
    candidates = [m.group(1) for m in _FENCE.finditer(response)]
    decoder = json.JSONDecoder()
    for block in candidates:
        try:
            return load_background(block)
        except (BackgroundParseError, BackgroundSchemaError):
            continue
    for m in re.finditer(r"\{", response):
        chunk = _strip_trailing_commas(response[m.start():])
        try:
            obj, _ = decoder.raw_decode(chunk)
        except json.JSONDecodeError:
            continue
        try:
            return _from_obj(obj)
        except BackgroundSchemaError:
            continue
    raise ExtractionError("no background document found in response")
