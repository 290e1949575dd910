import json
import socket

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from geoloc.errors import ConfigError
from geoloc.geo import GeoPoint
from geoloc.prior import (
    FilePriorProvider,
    PriorSource,
    PriorStatus,
    RemotePriorProvider,
    extract_coordinates,
    get_prior,
    make_provider,
    read_raw_responses,
    write_prior_file,
)
from prior_fixtures import EXTRACTION_CASES


@pytest.mark.parametrize("text,expected", EXTRACTION_CASES)
def test_extraction_fixtures(text, expected):
    est = extract_coordinates(text)
    if expected is None:
        assert est.status is PriorStatus.UNAVAILABLE
        assert est.location is None
    else:
        assert est.status is PriorStatus.PARSED
        assert est.location.as_tuple() == pytest.approx(expected)
    assert est.raw_text == text


def test_fixture_suite_size():
    assert len(EXTRACTION_CASES) >= 25


@given(st.text())
def test_extraction_pure_and_valid(text):
    a, b = extract_coordinates(text), extract_coordinates(text)
    assert a == b
    if a.parsed:
        assert -90 <= a.location.lat <= 90 and -180 <= a.location.lon < 180


@given(st.floats(-90, 90), st.floats(-180, 179.99), st.text(alphabet="abc .,:"))
def test_extraction_recovers_trailing_pair(lat, lon, prefix):
    text = f"{prefix} {lat:.6f}, {lon:.6f}"
    est = extract_coordinates(text)
    assert est.parsed
    # negative values keep their sign because they are formatted with a decimal point
    assert est.location.lat == pytest.approx(float(f"{lat:.6f}"))


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_file_prior_lookup(tmp_path):
    src = PriorSource(kind="file", path=str(write(tmp_path / "p.csv", "17, 48.8566, 2.3522\n")))
    provider = make_provider(src)
    est = get_prior(provider, 17)
    assert est.status is PriorStatus.PARSED and est.location == GeoPoint(48.8566, 2.3522)
    missing = get_prior(provider, 18)
    assert missing.status is PriorStatus.UNAVAILABLE


def test_file_prior_tabs_header_and_text(tmp_path):
    path = write(tmp_path / "p.tsv", "query_id\tlat\tlon\tnote\n1\t10.5\t200\tsome, free text\n")
    est = make_provider(PriorSource(kind="file", path=str(path))).get(1)
    assert est.location == GeoPoint(10.5, -160.0)
    assert est.raw_text == "some, free text"


def test_file_prior_bad_line(tmp_path):
    path = write(tmp_path / "p.csv", "1,0,0\nx,1,2\n")
    with pytest.raises(ConfigError):
        make_provider(PriorSource(kind="file", path=str(path)))


def test_raw_responses_round_trip(tmp_path):
    path = write(tmp_path / "r.tsv", "1\tAnswer: -33.86, 151.21\n2\tno idea\n3\tfinal 1850 then 40.71, -74.00\n")
    priors = read_raw_responses(path)
    assert priors[1].location == GeoPoint(-33.86, 151.21)
    assert not priors[2].parsed
    skipped = write_prior_file(priors, tmp_path / "out.csv")
    assert skipped == 1
    again = make_provider(PriorSource(kind="file", path=str(tmp_path / "out.csv")))
    assert again.get(3).location == GeoPoint(40.71, -74.0)
    assert not again.get(2).parsed
    responses = make_provider(PriorSource(kind="file", path=str(path), format="responses"))
    assert responses.get(1).location == GeoPoint(-33.86, 151.21)


def test_file_provider_makes_no_network_calls(tmp_path, monkeypatch):
    def no_network(*args, **kwargs):
        raise AssertionError("network access attempted")

    monkeypatch.setattr(socket, "socket", no_network)
    monkeypatch.setattr(socket, "create_connection", no_network)
    path = write(tmp_path / "p.csv", "1,1,1\n")
    provider = make_provider(PriorSource(kind="file", path=str(path)))
    assert provider.get(1).parsed and not provider.get(2).parsed


@pytest.mark.parametrize(
    "doc",
    [
        {"kind": "file"},
        {"kind": "file", "path": "x", "url": "http://h"},
        {"kind": "remote", "url": "http://h", "model": "m"},
        {"kind": "remote", "path": "x", "url": "http://h", "model": "m", "prompt_template": "t"},
        {"kind": "file", "path": "x", "format": "yaml"},
        {"kind": "file", "path": "x", "bogus": 1},
    ],
)
def test_source_validation(doc):
    with pytest.raises(ConfigError):
        PriorSource.from_dict(doc)


@pytest.fixture
def remote_source(tmp_path):
    write(tmp_path / "prompt.txt", "Where was this photo taken? End with lat, lon.")
    return PriorSource(kind="remote", url="https://vlm.example/v1/chat/completions", model="vlm-1",
                       prompt_template=str(tmp_path / "prompt.txt"), token_env="GEOLOC_TEST_TOKEN",
                       retries=2, backoff_s=0.5)


def chat_reply(text):
    return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": text}}]})


def test_remote_mock_endpoint(remote_source, monkeypatch):
    monkeypatch.setenv("GEOLOC_TEST_TOKEN", "sekrit")
    seen = []

    def handler(request):
        seen.append(request)
        return chat_reply("Answer: -33.86, 151.21")

    provider = RemotePriorProvider(remote_source, client=httpx.Client(transport=httpx.MockTransport(handler)))
    est = get_prior(provider, 5, b"\x89PNG....")
    assert est.status is PriorStatus.PARSED
    assert est.location == GeoPoint(-33.86, 151.21)
    body = json.loads(seen[0].content)
    assert body["model"] == "vlm-1" and body["temperature"] == 0
    parts = body["messages"][0]["content"]
    assert parts[0]["text"].startswith("Where was this photo")
    assert parts[1]["image_url"]["url"].startswith("data:image/png;base64,")
    assert seen[0].headers["authorization"] == "Bearer sekrit"


def test_remote_retries_then_succeeds(remote_source, monkeypatch):
    monkeypatch.setenv("GEOLOC_TEST_TOKEN", "t")
    calls, sleeps = [], []

    def handler(request):
        calls.append(1)
        if len(calls) == 1:
            raise httpx.ConnectError("down", request=request)
        if len(calls) == 2:
            return httpx.Response(503)
        return chat_reply("48.85, 2.35")

    provider = RemotePriorProvider(remote_source, client=httpx.Client(transport=httpx.MockTransport(handler)),
                                   sleep=sleeps.append)
    assert provider.get(1, b"img").location == GeoPoint(48.85, 2.35)
    assert sleeps == [0.5, 1.0]
    assert provider.exhausted == 0


def test_remote_exhaustion(remote_source, monkeypatch):
    monkeypatch.setenv("GEOLOC_TEST_TOKEN", "t")
    sleeps = []
    provider = RemotePriorProvider(
        remote_source, client=httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(500))),
        sleep=sleeps.append,
    )
    est = provider.get(1, b"img")
    assert est.status is PriorStatus.UNAVAILABLE
    assert provider.exhausted == 1 and provider.requests == 3
    assert sleeps == [0.5, 1.0]


def test_remote_client_error_not_retried(remote_source, monkeypatch):
    monkeypatch.setenv("GEOLOC_TEST_TOKEN", "t")
    provider = RemotePriorProvider(
        remote_source, client=httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(401))),
        sleep=lambda s: None,
    )
    assert not provider.get(1, b"img").parsed
    assert provider.requests == 1 and provider.exhausted == 0


def test_remote_missing_token(remote_source, monkeypatch):
    monkeypatch.delenv("GEOLOC_TEST_TOKEN", raising=False)
    with pytest.raises(ConfigError):
        RemotePriorProvider(remote_source)


def test_remote_needs_image(remote_source, monkeypatch):
    monkeypatch.setenv("GEOLOC_TEST_TOKEN", "t")
    provider = RemotePriorProvider(remote_source, client=httpx.Client(transport=httpx.MockTransport(chat_reply)))
    with pytest.raises(ConfigError):
        provider.get(1)


def test_file_provider_direct():
    provider = FilePriorProvider({}, "empty")
    assert provider.get(1).provider_tag == "empty"
