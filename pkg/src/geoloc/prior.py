"""Coordinate priors: parsing free text, prior files, and a remote chat endpoint."""

from __future__ import annotations

import base64
import csv
import enum
import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Protocol

import httpx

from geoloc.errors import ConfigError, OutOfRangeLatitude
from geoloc.geo import GeoPoint

log = logging.getLogger(__name__)

# Signed decimals, or unsigned integers. A leading sign on an integer is not
# part of the match, so "-74" yields 74.
COORD_PATTERN = re.compile(r"[-+]?\d*\.\d+|\d+")


class PriorStatus(str, enum.Enum):
    PARSED = "parsed"
    UNAVAILABLE = "fallback-unavailable"


@dataclass(frozen=True)
class PriorEstimate:
    location: GeoPoint | None
    status: PriorStatus
    raw_text: str = ""
    provider_tag: str = ""

    def __post_init__(self) -> None:
        if self.status is PriorStatus.PARSED and self.location is None:
            raise ValueError("a parsed prior needs a location")

    @property
    def parsed(self) -> bool:
        return self.status is PriorStatus.PARSED

    @classmethod
    def unavailable(cls, raw_text: str = "", provider_tag: str = "") -> PriorEstimate:
        return cls(None, PriorStatus.UNAVAILABLE, raw_text, provider_tag)


def numeric_tokens(text: str) -> list[float]:
    return [float(tok) for tok in COORD_PATTERN.findall(text)]


def extract_coordinates(text: str, provider_tag: str = "") -> PriorEstimate:
    """Take the last adjacent (lat, lon) token pair that forms a valid coordinate.

    Tokens come from COORD_PATTERN in order of appearance. Pairs are tried
    from the end of the text backwards; a pair is accepted when the latitude
    is within [-90, 90] and the longitude within [-180, 180].
    """
    tokens = numeric_tokens(text)
    for i in range(len(tokens) - 2, -1, -1):
        lat, lon = tokens[i], tokens[i + 1]
        if abs(lon) > 180.0:
            continue
        try:
            point = GeoPoint(lat, lon)
        except OutOfRangeLatitude:
            continue
        return PriorEstimate(point, PriorStatus.PARSED, text, provider_tag)
    return PriorEstimate.unavailable(text, provider_tag)


# --------------------------------------------------------------------------
# sources


class PriorKind(str, enum.Enum):
    FILE = "file"
    REMOTE = "remote"


@dataclass(frozen=True)
class PriorSource:
    """Where priors come from.

    File sources read either a parsed prior file (``format="priors"``) or a
    raw-responses file (``format="responses"``). Remote sources call a
    chat-completion endpoint once per query.
    """

    kind: PriorKind
    path: str | None = None
    format: str = "priors"
    url: str | None = None
    model: str | None = None
    prompt_template: str | None = None
    token_env: str | None = None
    timeout_s: float = 60.0
    retries: int = 3
    backoff_s: float = 1.0
    max_in_flight: int = 4

    def __post_init__(self) -> None:
        kind = PriorKind(self.kind)
        object.__setattr__(self, "kind", kind)
        remote_fields = (self.url, self.model, self.prompt_template, self.token_env)
        if kind is PriorKind.FILE:
            if not self.path:
                raise ConfigError("file prior source needs a path")
            if any(f is not None for f in remote_fields):
                raise ConfigError("file prior source must not set remote endpoint fields")
            if self.format not in ("priors", "responses"):
                raise ConfigError(f"unknown prior file format {self.format!r}")
        else:
            if self.path is not None:
                raise ConfigError("remote prior source must not set a file path")
            if not self.url or not self.model or not self.prompt_template:
                raise ConfigError("remote prior source needs url, model and prompt_template")
            if self.retries < 0 or self.timeout_s <= 0 or self.max_in_flight < 1:
                raise ConfigError("remote prior source has invalid retry/timeout/in-flight settings")

    @classmethod
    def from_dict(cls, doc: dict) -> PriorSource:
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(f"bad prior source: {exc}") from None

    def to_dict(self) -> dict:
        out = {"kind": self.kind.value}
        for name in ("path", "format", "url", "model", "prompt_template", "token_env"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        if self.kind is PriorKind.REMOTE:
            out.update(timeout_s=self.timeout_s, retries=self.retries, backoff_s=self.backoff_s,
                       max_in_flight=self.max_in_flight)
        return out


class PriorProvider(Protocol):
    tag: str

    def get(self, query_id: int, image: bytes | None = None) -> PriorEstimate: ...


def _split_fields(line: str, maxsplit: int) -> list[str]:
    delim = "\t" if "\t" in line else ","
    return [f.strip() for f in line.split(delim, maxsplit)]


def read_prior_file(path: str | os.PathLike, provider_tag: str | None = None) -> dict[int, PriorEstimate]:
    """Parse ``query_id, lat, lon [, free-text]`` lines (comma or tab separated)."""
    tag = provider_tag or f"file:{Path(path).name}"
    out: dict[int, PriorEstimate] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = _split_fields(line, 3)
            try:
                qid = int(parts[0])
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise ConfigError(f"{path}:{lineno}: bad query id {parts[0]!r}") from None
            if len(parts) < 3:
                raise ConfigError(f"{path}:{lineno}: expected query_id, lat, lon")
            try:
                point = GeoPoint(float(parts[1]), float(parts[2]))
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None
            text = parts[3] if len(parts) > 3 else ""
            out[qid] = PriorEstimate(point, PriorStatus.PARSED, text, tag)
    return out


def read_raw_responses(path: str | os.PathLike, provider_tag: str | None = None) -> dict[int, PriorEstimate]:
    """Parse ``query_id<TAB>response text`` lines through extract_coordinates."""
    tag = provider_tag or f"responses:{Path(path).name}"
    out: dict[int, PriorEstimate] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            qid_text, _, text = line.partition("\t")
            try:
                qid = int(qid_text)
            except ValueError:
                if lineno == 1:
                    continue
                raise ConfigError(f"{path}:{lineno}: bad query id {qid_text!r}") from None
            out[qid] = extract_coordinates(text, tag)
    return out


def write_prior_file(priors: dict[int, PriorEstimate], path: str | os.PathLike) -> int:
    """Write parsed priors sorted by id; returns how many were skipped as unavailable."""
    skipped = 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query_id", "lat", "lon"])
        for qid in sorted(priors):
            est = priors[qid]
            if not est.parsed:
                skipped += 1
                continue
            w.writerow([qid, repr(est.location.lat), repr(est.location.lon)])
    return skipped


class FilePriorProvider:
    """Table lookup; never touches the network."""

    def __init__(self, priors: dict[int, PriorEstimate], tag: str):
        self._priors = priors
        self.tag = tag

    @classmethod
    def from_source(cls, source: PriorSource) -> FilePriorProvider:
        reader = read_prior_file if source.format == "priors" else read_raw_responses
        try:
            priors = reader(source.path)
        except OSError as exc:
            raise ConfigError(f"cannot read prior file {source.path}: {exc}") from exc
        return cls(priors, f"{source.format}:{Path(source.path).name}")

    def __len__(self) -> int:
        return len(self._priors)

    def get(self, query_id: int, image: bytes | None = None) -> PriorEstimate:
        est = self._priors.get(int(query_id))
        if est is None:
            return PriorEstimate.unavailable(provider_tag=self.tag)
        return est


def _image_mime(data: bytes) -> str:
    if data.startswith(b"\x89PNG"):
        return "image/png"
    if data[:4] == b"RIFF" and data[8:12] == b"WEBP":
        return "image/webp"
    return "image/jpeg"


def _message_text(body: dict) -> str:
    content = body["choices"][0]["message"]["content"]
    if isinstance(content, list):
        return "".join(part.get("text", "") for part in content if isinstance(part, dict))
    return str(content)


class RemotePriorProvider:
    """One chat-completion request per query, with bounded retries.

    Transport errors, 429 and 5xx responses are retried with exponential
    backoff. Once retries run out the query gets an unavailable prior and
    ``exhausted`` is incremented.
    """

    def __init__(
        self,
        source: PriorSource,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if source.kind is not PriorKind.REMOTE:
            raise ConfigError("RemotePriorProvider needs a remote source")
        self.source = source
        self.tag = f"remote:{source.model}"
        try:
            self.prompt = Path(source.prompt_template).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read prompt template {source.prompt_template}: {exc}") from exc
        headers = {"Content-Type": "application/json"}
        if source.token_env:
            token = os.environ.get(source.token_env)
            if token is None:
                raise ConfigError(f"environment variable {source.token_env} is not set")
            headers["Authorization"] = f"Bearer {token}"
        self._client = client or httpx.Client(timeout=source.timeout_s)
        self._headers = headers
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(source.max_in_flight)
        self._lock = threading.Lock()
        self.exhausted = 0
        self.requests = 0

    def request_body(self, image: bytes) -> dict:
        data_url = f"data:{_image_mime(image)};base64,{base64.b64encode(image).decode('ascii')}"
        return {
            "model": self.source.model,
            "temperature": 0,
            "messages": [
                {
                    "role": "user",
                    "content": [
                        {"type": "text", "text": self.prompt},
                        {"type": "image_url", "image_url": {"url": data_url}},
                    ],
                }
            ],
        }

    def get(self, query_id: int, image: bytes | None = None) -> PriorEstimate:
        if image is None:
            raise ConfigError(f"remote prior for query {query_id} needs image bytes")
        body = self.request_body(image)
        attempts = self.source.retries + 1
        for attempt in range(attempts):
            with self._slots:
                with self._lock:
                    self.requests += 1
                try:
                    resp = self._client.post(self.source.url, json=body, headers=self._headers)
                except httpx.TransportError as exc:
                    log.warning("query %s: transport error %s (attempt %d/%d)", query_id,
                                type(exc).__name__, attempt + 1, attempts)
                    resp = None
            if resp is not None:
                if resp.status_code == 429 or resp.status_code >= 500:
                    log.warning("query %s: HTTP %d (attempt %d/%d)", query_id, resp.status_code,
                                attempt + 1, attempts)
                elif resp.status_code >= 400:
                    log.warning("query %s: HTTP %d, not retrying", query_id, resp.status_code)
                    return PriorEstimate.unavailable(provider_tag=self.tag)
                else:
                    try:
                        text = _message_text(resp.json())
                    except (ValueError, KeyError, IndexError, TypeError):
                        log.warning("query %s: malformed response body", query_id)
                        return PriorEstimate.unavailable(provider_tag=self.tag)
                    return extract_coordinates(text, self.tag)
            if attempt + 1 < attempts:
                self._sleep(self.source.backoff_s * 2**attempt)
        with self._lock:
            self.exhausted += 1
        return PriorEstimate.unavailable(provider_tag=self.tag)

    def close(self) -> None:
        self._client.close()


def make_provider(source: PriorSource, **kwargs) -> PriorProvider:
    if source.kind is PriorKind.FILE:
        return FilePriorProvider.from_source(source)
    return RemotePriorProvider(source, **kwargs)


def get_prior(provider: PriorProvider, query_id: int, image_ref: bytes | None = None) -> PriorEstimate:
    return provider.get(query_id, image_ref)


def priors_from_points(points: dict[int, GeoPoint], tag: str = "memory") -> FilePriorProvider:
    return FilePriorProvider({q: PriorEstimate(p, PriorStatus.PARSED, "", tag) for q, p in points.items()}, tag)


def parse_failures(estimates: Iterable[PriorEstimate]) -> int:
    return sum(1 for e in estimates if not e.parsed)
