"""Clients for generation (LLM) and question-answering (VQA) services.

Both roles speak one tiny wire protocol so any model can be wrapped by a
server-side adapter:

    POST /v1/complete   {"preamble": str, "input": str}     -> {"text": str}
    POST /v1/vqa        {"question": str, "image_ref": str|null,
                         "image_b64": str|null}             -> {"answer": str}

Errors come back as non-200 with ``{"error": str}``.  The deterministic
mocks below make the whole engine testable offline.
"""

from __future__ import annotations

import base64
import json
import os
import threading
from importlib import resources
from typing import Iterable, Mapping, Protocol, runtime_checkable

import requests

from .errors import BackendError, HttpStatus, MalformedResponse, Timeout
from .graph import QuestionNode, SceneGraph, SemanticTuple

MAX_INLINE_IMAGE_BYTES = 8 * 1024 * 1024

COMPLETE_PATH = "/v1/complete"
VQA_PATH = "/v1/vqa"


@runtime_checkable
class GenerationBackend(Protocol):
    name: str

    def complete(self, preamble: str, input_text: str) -> str: ...


@runtime_checkable
class QaBackend(Protocol):
    name: str

    def ask(self, image_ref: str, question) -> str: ...


def _question_text(question) -> str:
    return question.text if isinstance(question, QuestionNode) else str(question)


DEFAULT_MAX_CONCURRENCY = 8


class _HttpClient:
    """Shareable across workers; in-flight requests capped per client."""

    def __init__(
        self,
        base_url: str,
        timeout: float = 60.0,
        token: str | None = None,
        max_concurrency: int = DEFAULT_MAX_CONCURRENCY,
    ):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.token = token if token is not None else os.environ.get("DSG_BACKEND_TOKEN")
        self._session = requests.Session()
        self._gate = threading.BoundedSemaphore(max_concurrency)

    def _post(self, path: str, payload: dict) -> dict:
        headers = {}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        try:
            with self._gate:
                resp = self._session.post(
                    self.base_url + path, json=payload, timeout=self.timeout, headers=headers
                )
        except (requests.Timeout, requests.ConnectionError) as err:
            raise Timeout(f"{self.base_url}{path}: {err}") from err
        except requests.RequestException as err:
            raise BackendError(f"{self.base_url}{path}: {err}") from err
        if resp.status_code != 200:
            detail = ""
            try:
                detail = resp.json().get("error", "")
            except ValueError:
                pass
            raise HttpStatus(resp.status_code, detail)
        try:
            body = resp.json()
        except ValueError as err:
            raise MalformedResponse(f"response is not JSON: {err}") from err
        if not isinstance(body, dict):
            raise MalformedResponse(f"expected a JSON object, got {type(body).__name__}")
        return body


class HttpGenerationBackend(_HttpClient):
    """Generation client for the ``/v1/complete`` endpoint."""

    def __init__(self, base_url, timeout=60.0, token=None, name=None,
                 max_concurrency=DEFAULT_MAX_CONCURRENCY):
        super().__init__(base_url, timeout, token, max_concurrency)
        self.name = name or base_url

    def complete(self, preamble: str, input_text: str) -> str:
        body = self._post(COMPLETE_PATH, {"preamble": preamble, "input": input_text})
        text = body.get("text")
        if not isinstance(text, str):
            raise MalformedResponse("missing string field 'text'")
        return text


class HttpQaBackend(_HttpClient):
    """VQA client for the ``/v1/vqa`` endpoint.

    Images travel by reference by default.  With ``inline_images=True``
    and a readable local path, the image is sent base64-inline instead
    (capped at 8 MiB).
    """

    def __init__(self, base_url, timeout=60.0, token=None, name=None, inline_images=False,
                 max_concurrency=DEFAULT_MAX_CONCURRENCY):
        super().__init__(base_url, timeout, token, max_concurrency)
        self.name = name or base_url
        self.inline_images = inline_images

    def ask(self, image_ref: str, question) -> str:
        payload = {"question": _question_text(question), "image_ref": image_ref, "image_b64": None}
        if self.inline_images and image_ref and os.path.isfile(image_ref):
            data = open(image_ref, "rb").read()
            if len(data) > MAX_INLINE_IMAGE_BYTES:
                raise BackendError(
                    f"{image_ref}: {len(data)} bytes exceeds the {MAX_INLINE_IMAGE_BYTES} inline cap"
                )
            payload["image_ref"] = None
            payload["image_b64"] = base64.b64encode(data).decode("ascii")
        body = self._post(VQA_PATH, payload)
        answer = body.get("answer")
        if not isinstance(answer, str):
            raise MalformedResponse("missing string field 'answer'")
        return answer


# ---------------------------------------------------------------------------
# Deterministic mocks


class ScriptedGenerationBackend:
    """Mock LLM keyed by (stage, prompt).

    ``scripts`` maps stage name -> {prompt -> completion}, where a
    completion may be a list to vary across repeated calls (the last
    entry repeats once exhausted) — that is how retry behaviour is
    scripted.  The stage of an incoming call is recognized by exact
    preamble match against ``preambles``; the prompt key is the part of
    the input before the first blank line.
    """

    def __init__(self, scripts: Mapping[str, Mapping[str, object]], preambles, name="scripted-llm"):
        self.scripts = scripts
        self.preambles = preambles
        self.name = name
        self.calls: list[tuple[str, str]] = []
        self._counters: dict[tuple[str, str], int] = {}

    def _stage_of(self, preamble: str) -> str:
        p = self.preambles
        if preamble == p.tuple_preamble:
            return "tuples"
        if preamble == p.question_preamble:
            return "questions"
        if preamble == p.dependency_preamble:
            return "dependencies"
        raise BackendError("scripted backend got an unknown preamble")

    def complete(self, preamble: str, input_text: str) -> str:
        stage = self._stage_of(preamble)
        key = input_text.split("\n\n", 1)[0]
        self.calls.append((stage, key))
        try:
            entry = self.scripts[stage][key]
        except KeyError:
            raise BackendError(f"no script for stage {stage!r}, prompt {key!r}") from None
        if isinstance(entry, str):
            return entry
        idx = self._counters.get((stage, key), 0)
        self._counters[(stage, key)] = idx + 1
        return entry[min(idx, len(entry) - 1)]


def tuple_key(t: SemanticTuple) -> tuple[str, str, tuple[str, ...]]:
    """Content identity of a tuple, independent of its id."""
    return (t.category.value, t.subcategory.value, t.args)


class SceneOracle:
    """Mock VQA backend answering from ground-truth scene contents.

    A scene is the set of tuples actually "in" an image.  The oracle
    resolves the asked question back to its source tuple (via the graph
    for that image) and answers yes iff that tuple is in the scene.
    Every call is logged, which lets tests assert that skipped questions
    were never transmitted.
    """

    def __init__(
        self,
        scenes: Mapping[str, Iterable[SemanticTuple]],
        graphs_by_image: Mapping[str, SceneGraph],
        name: str = "scene-oracle",
    ):
        self._scenes = {ref: {tuple_key(t) for t in ts} for ref, ts in scenes.items()}
        self._graphs = dict(graphs_by_image)
        self.name = name
        self.calls: list[tuple[str, int]] = []

    def ask(self, image_ref: str, question) -> str:
        if not isinstance(question, QuestionNode):
            raise BackendError("SceneOracle needs the question node, not bare text")
        try:
            g = self._graphs[image_ref]
            scene = self._scenes[image_ref]
        except KeyError:
            raise BackendError(f"no scene registered for image {image_ref!r}") from None
        self.calls.append((image_ref, question.id))
        t = g.get_tuple(question.tuple_id)
        return "yes" if tuple_key(t) in scene else "no"


class StaticQaBackend:
    """Mock VQA returning canned raw replies keyed by question id."""

    def __init__(self, replies: Mapping[int, str], default: str = "no", name: str = "static-qa"):
        self.replies = dict(replies)
        self.default = default
        self.name = name
        self.calls: list[tuple[str, int]] = []

    def ask(self, image_ref: str, question) -> str:
        self.calls.append((image_ref, question.id))
        return self.replies.get(question.id, self.default)


# ---------------------------------------------------------------------------
# Wire-protocol conformance vectors


def load_wire_vectors() -> list[dict]:
    """The shared request/response vectors any server implementation must pass."""
    text = resources.files("dsg").joinpath("data/wire_vectors.json").read_text("utf-8")
    return json.loads(text)["vectors"]


def run_wire_vectors(post, get=None, vectors=None) -> list[str]:
    """Replay conformance vectors against a server; return failure strings.

    ``post(path, payload) -> (status, body_dict)`` and optionally
    ``get(path) -> (status, body_dict)`` abstract the transport, so the
    same vectors run against a live server or an in-process test client.
    """
    failures = []
    for vec in vectors if vectors is not None else load_wire_vectors():
        name = vec["name"]
        method = vec.get("method", "POST")
        if method == "GET":
            if get is None:
                continue
            status, body = get(vec["endpoint"])
        else:
            status, body = post(vec["endpoint"], vec["request"])
        expect = vec["expect"]
        if status != expect["status"]:
            failures.append(f"{name}: status {status} != {expect['status']}")
            continue
        if not isinstance(body, dict):
            failures.append(f"{name}: body is not a JSON object")
            continue
        for key in expect.get("keys", []):
            if key not in body:
                failures.append(f"{name}: missing response key {key!r}")
            elif not isinstance(body[key], str):
                failures.append(f"{name}: response key {key!r} is not a string")
    return failures
