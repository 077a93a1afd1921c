import json
import socket
import urllib.error
import urllib.request

import pytest

from abr_lab.mock_advisor import Behavior, BindError, Fixture, FixtureTable, MockAdvisorServer, load_fixtures, serve
from abr_lab.model import default_ladder
from abr_lab.policy import AdvisorRequest, AdvisorResponse, HttpAdvisorClient, InvalidResponse

LABELS = tuple(default_ladder().labels)


def req(kbps, lat=20.0):
    return AdvisorRequest(lat, kbps, "240p", 50_000, LABELS)


def post(url, body: bytes, timeout=2):
    r = urllib.request.Request(url, data=body, method="POST", headers={"Content-Type": "application/json"})
    with urllib.request.urlopen(r, timeout=timeout) as resp:
        return resp.status, resp.read()


class TestFixtureTable:
    def test_bundled_high_latency_case(self):
        assert load_fixtures().lookup(req(1314.9825, 1347.11)) == AdvisorResponse("1080p", 1_355_984)

    def test_default_when_nothing_matches(self):
        table = load_fixtures()
        assert table.lookup(req(5000, 20)) == table.default

    def test_absent_latency_only_matches_wildcard(self):
        table = load_fixtures()
        assert table.lookup(req(1500, None)) == table.default
        assert table.lookup(req(100, None)) == AdvisorResponse("240p", 150_000)

    def test_inclusive_bounds(self):
        fx = Fixture(AdvisorResponse("480p", 1), (10.0, 20.0), (100.0, 200.0))
        assert fx.matches(req(100, 10)) and fx.matches(req(200, 20))
        assert not fx.matches(req(200.01, 20))

    def test_first_match_in_order(self):
        a = Fixture(AdvisorResponse("480p", 1), avg_kbps_in=(0, 100), name="a")
        b = Fixture(AdvisorResponse("720p", 2), avg_kbps_in=(100.5, 200), name="b")
        table = FixtureTable((a, b), AdvisorResponse("240p", 3))
        assert table.lookup(req(50)).resolution_label == "480p"
        assert table.lookup(req(150)).resolution_label == "720p"
        assert table.lookup(req(100.2)).resolution_label == "240p"

    def test_overlap_rejected(self):
        a = Fixture(AdvisorResponse("480p", 1), avg_kbps_in=(0, 100))
        b = Fixture(AdvisorResponse("720p", 2), avg_kbps_in=(100, 200))
        with pytest.raises(ValueError):
            FixtureTable((a, b), AdvisorResponse("240p", 3))

    def test_disjoint_on_other_axis_is_fine(self):
        a = Fixture(AdvisorResponse("480p", 1), (0, 50), (0, 100))
        b = Fixture(AdvisorResponse("720p", 2), (51, 90), (0, 100))
        FixtureTable((a, b), AdvisorResponse("240p", 3))

    def test_from_dict_needs_default(self):
        with pytest.raises(ValueError):
            FixtureTable.from_dict({"fixtures": []})

    def test_from_dict_rejects_unknown_keys_and_bad_responses(self):
        with pytest.raises(ValueError):
            FixtureTable.from_dict({"fixtures": [{"match": {"rtt": [0, 1]}, "response": {"resolution": "240p", "buffer_bytes": 1}}], "default": {"resolution": "240p", "buffer_bytes": 1}})
        with pytest.raises(InvalidResponse):
            FixtureTable.from_dict({"default": {"resolution": "240p", "buffer_bytes": -1}})

    def test_load_from_file(self, tmp_path):
        p = tmp_path / "fx.json"
        p.write_text(json.dumps({"fixtures": [{"match": {"avg_kbps_in": [0, 10]}, "response": {"resolution": "360p", "buffer_bytes": 9}}], "default": {"resolution": "240p", "buffer_bytes": 1}}))
        assert load_fixtures(p).lookup(req(5)) == AdvisorResponse("360p", 9)


class TestBehavior:
    @pytest.mark.parametrize("text,expected", [("normal", Behavior()), ("drop", Behavior("drop")), ("delay:250", Behavior("delay", 250.0))])
    def test_parse(self, text, expected):
        assert Behavior.parse(text) == expected

    @pytest.mark.parametrize("text", ["slow", "delay:-5", "delay:abc"])
    def test_parse_rejects(self, text):
        with pytest.raises(ValueError):
            Behavior.parse(text)


class TestServer:
    def test_response_conforms_to_schema(self, mock_advisor):
        srv = mock_advisor()
        status, body = post(srv.url, json.dumps(req(1314.9825, 1347.11).to_wire()).encode())
        assert status == 200
        payload = json.loads(body)
        assert set(payload) == {"resolution", "buffer_bytes"}
        assert AdvisorResponse.from_wire(payload) == AdvisorResponse("1080p", 1_355_984)

    def test_records_requests(self, mock_advisor):
        srv = mock_advisor()
        client = HttpAdvisorClient(srv.url)
        for k in (100, 1500, 5000):
            client.advise(req(k, 1200), 1.0)
        assert [r.avg_kbps_in for r in srv.requests] == [100, 1500, 5000]

    def test_bad_request_is_400(self, mock_advisor):
        srv = mock_advisor()
        with pytest.raises(urllib.error.HTTPError) as info:
            post(srv.url, b'{"avg_kbps_in": "fast"}')
        assert info.value.code == 400

    def test_malformed_body(self, mock_advisor):
        srv = mock_advisor("malformed")
        _, body = post(srv.url, json.dumps(req(100).to_wire()).encode())
        with pytest.raises(ValueError):
            json.loads(body)

    def test_drop_never_answers(self, mock_advisor):
        srv = mock_advisor("drop")
        with pytest.raises((socket.timeout, TimeoutError, urllib.error.URLError)):
            post(srv.url, json.dumps(req(100).to_wire()).encode(), timeout=0.2)

    def test_bind_error(self):
        with serve() as srv:
            port = int(srv.url.rsplit(":", 1)[1].split("/")[0])
            with pytest.raises(BindError):
                MockAdvisorServer(load_fixtures(), port=port)

    def test_context_manager_stops(self):
        with MockAdvisorServer(load_fixtures()) as srv:
            url = srv.url
            assert post(url, json.dumps(req(100).to_wire()).encode())[0] == 200
        with pytest.raises(OSError):
            post(url, json.dumps(req(100).to_wire()).encode(), timeout=0.5)
