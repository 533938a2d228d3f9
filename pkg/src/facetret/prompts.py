"""Prompt registry, question generation, prompt assembly and prompt selection."""
from __future__ import annotations

import json
import os
import re
import string
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

from ._http import make_client, post_json
from .errors import (
    BadResponse,
    FormatError,
    GeneratorUnavailable,
    IOFailure,
    MalformedQuestion,
    MissingPrompt,
    SelectorUnavailable,
    StoreIOError,
    UnparseableAnswer,
    ValidationError,
    ValidationFailed,
)

DEFAULT_WRAPPER = "<|image_1|> Represent the given image with the following question:"
IMAGE_TOKEN = "<|image_1|>"

QUESTION_TEMPLATE = (
    "Write a question to ask about the {attribute} in a image, with possible answers such as "
    "{answers}, and so on. Please answer in one sentence without mentioning any answer."
)
SELECTION_TEMPLATE = (
    "{prompts} Given the instruction {text}, choose the most relevant prompt for verifying the "
    "results. Please answer in one letter."
)
DEFAULT_MAX_TOKENS = 64

# GPT-written questions, one per COCO-Facet category.
GPT_QUESTIONS = {
    "animals": "Which animals can be seen in this image?",
    "scenes": "What type of location is depicted in this image?",
    "objects": "Which objects are present in this image?",
    "count_of_people": "How many people are present in this image?",
    "materials": "What material are the objects in this image made of?",
    "times": "What time of day is depicted in this image?",
    "weathers": "What is the weather like in this image?",
    "gestures": "What gesture are the people making in this image?",
}

HUMAN_QUESTIONS = {
    "animals": "What animals are in this image?",
    "scenes": "What scene is in the image?",
    "objects": "What objects are in the image?",
    "count_of_people": "How many people are in the image?",
    "materials": "What are the objects made of in the image?",
    "times": "When is the image taken?",
    "weathers": "What is the weather in the image?",
    "gestures": "What is the person doing in the image?",
}

_FACET_ALIASES = {
    "animal": "animals",
    "scene": "scenes",
    "location": "scenes",
    "object": "objects",
    "count of people": "count_of_people",
    "people count": "count_of_people",
    "number of people": "count_of_people",
    "material": "materials",
    "time": "times",
    "time of day": "times",
    "weather": "weathers",
    "gesture": "gestures",
    "people gesture": "gestures",
}


def canonical_facet(name: str) -> str | None:
    key = " ".join(re.sub(r"[^a-z0-9]+", " ", name.lower()).split())
    if key.replace(" ", "_") in GPT_QUESTIONS:
        return key.replace(" ", "_")
    return _FACET_ALIASES.get(key)


def assemble_prompt(question: str, wrapper: str = DEFAULT_WRAPPER) -> str:
    if not question.endswith("?"):
        raise MalformedQuestion(f"question must end with '?': {question!r}")
    return f"{wrapper} {question}" if wrapper else question


@dataclass(frozen=True)
class PromptSpec:
    prompt_id: str
    facet: str
    question: str
    wrapper: str = DEFAULT_WRAPPER
    full_prompt: str = field(init=False)

    def __post_init__(self):
        if not self.prompt_id:
            raise ValidationError("prompt_id must be non-empty")
        object.__setattr__(self, "full_prompt", assemble_prompt(self.question, self.wrapper))

    def to_json(self) -> dict:
        return {"prompt_id": self.prompt_id, "facet": self.facet, "question": self.question, "wrapper": self.wrapper}


class PromptRegistry:
    def __init__(self, prompts: Sequence[PromptSpec], wrapper_default: str = DEFAULT_WRAPPER):
        ids = [p.prompt_id for p in prompts]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate prompt_id in registry")
        self.prompts = tuple(prompts)
        self.wrapper_default = wrapper_default
        self._by_id = {p.prompt_id: p for p in self.prompts}

    def __len__(self):
        return len(self.prompts)

    def __iter__(self):
        return iter(self.prompts)

    def __contains__(self, prompt_id):
        return prompt_id in self._by_id

    def get(self, prompt_id: str) -> PromptSpec:
        try:
            return self._by_id[prompt_id]
        except KeyError:
            raise MissingPrompt(f"no prompt {prompt_id!r}") from None

    def for_facet(self, facet: str) -> PromptSpec:
        """First registered prompt for ``facet``."""
        for p in self.prompts:
            if p.facet == facet:
                return p
        raise MissingPrompt(f"no prompt registered for facet {facet!r}")

    def subset(self, facets: Sequence[str]) -> "PromptRegistry":
        keep = set(facets)
        return PromptRegistry([p for p in self.prompts if p.facet in keep], self.wrapper_default)

    def to_json(self) -> list:
        return [p.to_json() for p in self.prompts]


def _registry_from_questions(questions: Mapping[str, str], prefix: str) -> PromptRegistry:
    return PromptRegistry([PromptSpec(f"{prefix}_{f}", f, q) for f, q in questions.items()])


def default_registry() -> PromptRegistry:
    return _registry_from_questions(GPT_QUESTIONS, "gpt")


def human_registry() -> PromptRegistry:
    return _registry_from_questions(HUMAN_QUESTIONS, "human")


def load_registry(path) -> PromptRegistry:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise StoreIOError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if not isinstance(data, list):
        raise FormatError("prompt registry must be a JSON array")
    try:
        prompts = [
            PromptSpec(o["prompt_id"], o["facet"], o["question"], o.get("wrapper", DEFAULT_WRAPPER)) for o in data
        ]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"bad registry entry: {exc}") from exc
    return PromptRegistry(prompts)


def save_registry(registry: PromptRegistry, path) -> None:
    try:
        Path(path).write_text(json.dumps(registry.to_json(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    except OSError as exc:
        raise StoreIOError(f"cannot write {path}: {exc}") from exc


class TextGenClient(Protocol):
    def complete(self, messages: list[dict], max_tokens: int = DEFAULT_MAX_TOKENS) -> str: ...


class HttpTextGenClient:
    """POSTs ``{"messages": [...], "max_tokens": n}``, expects ``{"text": "..."}``.

    The endpoint defaults to the FACET_LLM_URL environment variable.
    """

    def __init__(self, url: str | None = None, *, timeout: float = 30.0, max_in_flight: int = 4, transport=None):
        self.url = url or os.environ.get("FACET_LLM_URL")
        if not self.url:
            raise GeneratorUnavailable("no text-generation endpoint configured (FACET_LLM_URL)")
        self._client = make_client(timeout, max_in_flight, transport)

    def complete(self, messages, max_tokens=DEFAULT_MAX_TOKENS):
        body = post_json(self._client, self.url, {"messages": list(messages), "max_tokens": max_tokens})
        text = body.get("text")
        if not isinstance(text, str):
            raise BadResponse("response lacks a 'text' string")
        return text

    def close(self):
        self._client.close()


def user_message(text: str) -> list[dict]:
    return [{"role": "user", "content": text}]


def question_request(facet_name: str, example_answers: Sequence[str]) -> str:
    return QUESTION_TEMPLATE.format(attribute=facet_name, answers=", ".join(example_answers))


def _clean(text: str) -> str:
    return text.strip().strip("\"'`").strip()


def question_problem(question: str, example_answers: Sequence[str]) -> str | None:
    """Why ``question`` is unacceptable, or None if it is fine."""
    if not question.endswith("?"):
        return "does not end with '?'"
    if "\n" in question or re.search(r"[.?!]\s", question[:-1]):
        return "is not a single sentence"
    for ans in example_answers:
        if re.search(rf"(?<!\w){re.escape(ans)}(?!\w)", question, re.IGNORECASE):
            return f"mentions the answer {ans!r}"
    return None


def generate_question(
    facet_name: str, example_answers: Sequence[str], generator: TextGenClient | None = None
) -> str:
    """Ask ``generator`` for an attribute question; None means use the offline registry."""
    if not facet_name:
        raise ValidationError("facet_name must be non-empty")
    if len(example_answers) < 2:
        raise ValidationError("need at least two example answers")
    if generator is None:
        canon = canonical_facet(facet_name)
        if canon is None:
            raise GeneratorUnavailable(f"no generator configured and no offline question for {facet_name!r}")
        return GPT_QUESTIONS[canon]
    request = user_message(question_request(facet_name, example_answers))
    problem = None
    for _ in range(2):
        try:
            question = _clean(generator.complete(request, DEFAULT_MAX_TOKENS))
        except IOFailure as exc:
            raise GeneratorUnavailable(str(exc)) from exc
        problem = question_problem(question, example_answers)
        if problem is None:
            return question
    raise ValidationFailed(f"generated question {question!r} {problem}")


def _strip_image_token(prompt: str) -> str:
    if prompt.startswith(IMAGE_TOKEN):
        return prompt[len(IMAGE_TOKEN) :].lstrip()
    return prompt


def build_selection_message(query_text: str, registry: PromptRegistry) -> str:
    if len(registry) > 26:
        raise ValidationError("letter-based selection supports at most 26 prompts")
    lines = [f"{string.ascii_uppercase[i]}. {_strip_image_token(p.full_prompt)}" for i, p in enumerate(registry)]
    return SELECTION_TEMPLATE.format(prompts="\n".join(lines), text=query_text)


def parse_letter(answer: str, n_choices: int) -> int:
    m = re.fullmatch(r"\s*([A-Za-z])\.?\s*", answer)
    if not m:
        raise UnparseableAnswer(f"expected a single letter, got {answer!r}")
    pos = ord(m.group(1).upper()) - ord("A")
    if pos >= n_choices:
        raise UnparseableAnswer(f"letter {m.group(1)!r} outside A-{string.ascii_uppercase[n_choices - 1]}")
    return pos


def tokens(text: str) -> set[str]:
    return set(re.findall(r"[a-z0-9]+", text.lower()))


def jaccard(a: set, b: set) -> float:
    union = a | b
    return len(a & b) / len(union) if union else 0.0


EXTERNAL = "external"
LEXICAL = "lexical"


@dataclass(frozen=True)
class SelectionOutcome:
    chosen: str
    method: str
    raw_response: str = ""


def select_lexical(query_text: str, registry: PromptRegistry) -> SelectionOutcome:
    q = tokens(query_text)
    best, best_score = None, -1.0
    for p in registry:
        s = jaccard(q, tokens(p.question))
        if s > best_score:
            best, best_score = p, s
    return SelectionOutcome(best.prompt_id, LEXICAL)


def select_prompt(
    query_text: str,
    registry: PromptRegistry,
    selector: TextGenClient | None = None,
    *,
    fallback_lexical: bool = False,
) -> SelectionOutcome:
    if len(registry) == 0:
        raise ValidationError("empty prompt registry")
    if selector is None:
        return select_lexical(query_text, registry)
    message = build_selection_message(query_text, registry)
    try:
        raw = selector.complete(user_message(message), DEFAULT_MAX_TOKENS)
    except IOFailure as exc:
        if fallback_lexical:
            return select_lexical(query_text, registry)
        raise SelectorUnavailable(str(exc)) from exc
    pos = parse_letter(raw, len(registry))
    return SelectionOutcome(registry.prompts[pos].prompt_id, EXTERNAL, raw)


def select_many(
    queries: Mapping[str, str],
    registry: PromptRegistry,
    selector: TextGenClient | None = None,
    *,
    fallback_lexical: bool = False,
    max_in_flight: int = 4,
) -> dict[str, SelectionOutcome]:
    """Select prompts for ``{case_id: query_text}`` with bounded concurrency."""
    if selector is None or max_in_flight <= 1:
        return {cid: select_prompt(t, registry, selector, fallback_lexical=fallback_lexical) for cid, t in queries.items()}
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        futures = {
            cid: pool.submit(select_prompt, t, registry, selector, fallback_lexical=fallback_lexical)
            for cid, t in queries.items()
        }
        return {cid: f.result() for cid, f in futures.items()}
