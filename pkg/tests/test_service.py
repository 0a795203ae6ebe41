import base64
import io
import wave

import pytest
from fastapi.testclient import TestClient

from mmvqtts.pipeline import Synthesizer
from mmvqtts.service import create_app


@pytest.fixture(scope="module")
def client(tiny_run):
    cfg, _ = tiny_run
    return TestClient(create_app(Synthesizer.load(cfg)))


def test_health_and_speakers(client):
    h = client.get("/health").json()
    assert h["status"] == "ok" and h["speakers"] == 6 and h["languages"] == ["hi", "mr", "te"]
    spk = client.get("/speakers").json()
    assert {s["speaker_id"] for s in spk} == {"hi_f", "hi_m", "mr_f", "mr_m", "te_f", "te_m"}


def test_synthesize_mono(client):
    r = client.post("/synthesize", json={"text": "ab cd", "speaker": "hi_f", "language": "hi"})
    assert r.status_code == 200
    body = r.json()
    t = body["trace"]
    assert t["mode"] == "mono" and t["am_speaker_id"] == t["voc_speaker_id"] == "hi_f"
    with wave.open(io.BytesIO(base64.b64decode(body["wav_base64"]))) as w:
        assert w.getnframes() == t["T"] * t["hop"] == t["audio_length"]
        assert w.getframerate() == body["sample_rate"] == 16000


def test_lazy_load_from_config(tiny_run):
    cfg, _ = tiny_run
    c = TestClient(create_app(config=cfg))
    assert c.get("/health").status_code == 200


def test_errors(client):
    assert client.post("/synthesize", json={"text": "ab", "speaker": "ghost", "language": "hi"}).status_code == 404
    assert client.post("/synthesize", json={"text": "ab", "speaker": "hi_f", "language": "xx"}).status_code == 404
    assert client.post("/synthesize", json={"text": "a1", "speaker": "hi_f", "language": "hi"}).status_code == 422
    assert client.post("/synthesize", json={"text": "", "speaker": "hi_f", "language": "hi"}).status_code == 422
