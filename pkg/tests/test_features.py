import math

import numpy as np
import pytest

from mmvqtts.audio import log_mel_np
from mmvqtts.errors import DegenerateEmbedding, InsufficientData, NoVoicedFrames, TooShort
from mmvqtts.features import (
    AuxFeatureSeq,
    SpeakerProfile,
    SurrogateQuantizer,
    assign,
    build_speaker_profile,
    extract_aux,
    extract_vq,
    fit_surrogate_quantizer,
    kmeans,
    load_profiles,
    save_profiles,
    surrogate_speaker_embedding,
)
from mmvqtts.toy import SPEAKERS, make_utterance_plan, render_utterance, ALPHABETS

SR = 16000


def tone(f, seconds=1.0, amp=0.5):
    t = np.arange(int(SR * seconds)) / SR
    return amp * np.sin(2 * np.pi * f * t)


@pytest.fixture(scope="module")
def synthetic_mels():
    import random

    rng = random.Random(0)
    nrng = np.random.default_rng(0)
    out = []
    for i in range(50):
        spk = sorted(SPEAKERS)[i % 6]
        _, plan, _ = make_utterance_plan(rng, ALPHABETS[SPEAKERS[spk][0]], 0.5, 1.0)
        wav = render_utterance(plan, spk, nrng)
        out.append((wav, log_mel_np(wav, SR, 400, 160, 80)))
    return out


@pytest.fixture(scope="module")
def quantizer(synthetic_mels):
    return fit_surrogate_quantizer([m for _, m in synthetic_mels], n_groups=2, codebook_size=64, seed=1, iters=10)


def test_frame_arithmetic(quantizer):
    vq = extract_vq(np.random.default_rng(0).normal(size=1600) * 0.1, quantizer)
    assert vq.T == 10 and vq.G == 2
    with pytest.raises(TooShort):
        extract_vq(np.zeros(100), quantizer)


def test_constant_input_single_code(quantizer):
    vq = extract_vq(np.zeros(3200), quantizer)
    for g in range(vq.G):
        assert len(set(vq.indices[:, g])) == 1


def test_indices_in_range(quantizer, synthetic_mels):
    for wav, _ in synthetic_mels:
        vq = extract_vq(wav, quantizer)
        assert vq.indices.min() >= 0 and vq.indices.max() < 64
        assert vq.T == len(wav) // 160 == extract_aux(wav).T


def test_kmeans_recovers_separated_centres():
    rng = np.random.default_rng(2)
    centres = rng.normal(size=(16, 4)) * 100
    data = np.repeat(centres, 5, axis=0)
    cb, hist = kmeans(data, 16, iters=5, seed=0)
    labels, dist = assign(data, cb)
    assert dist.max() < 1e-6
    got = sorted(map(tuple, np.round(cb, 6)))
    assert got == sorted(map(tuple, np.round(centres, 6)))


def test_kmeans_monotone_and_deterministic(synthetic_mels):
    data = np.concatenate([m for _, m in synthetic_mels])[:, :8]
    _, h1 = kmeans(data, 32, iters=1, seed=4)
    cb, h10 = kmeans(data, 32, iters=10, seed=4)
    assert h10[-1] <= h1[-1]
    assert all(b <= a + 1e-6 * abs(a) for a, b in zip(h10, h10[1:]))
    cb2, _ = kmeans(data, 32, iters=10, seed=4)
    np.testing.assert_array_equal(cb, cb2)
    with pytest.raises(InsufficientData):
        kmeans(data[:5], 32)


def test_quantizer_centroid_idempotent_and_persist(quantizer, tmp_path):
    for g in range(quantizer.n_groups):
        labels, _ = assign(quantizer.codebooks[g], quantizer.codebooks[g])
        assert list(labels) == list(range(quantizer.codebook_size))
    quantizer.save(tmp_path / "q.npz")
    back = SurrogateQuantizer.load(tmp_path / "q.npz")
    wav = tone(150, 0.3)
    np.testing.assert_array_equal(back.quantize(wav), quantizer.quantize(wav))


def test_same_seed_same_codebook(synthetic_mels):
    mels = [m for _, m in synthetic_mels[:20]]
    a = fit_surrogate_quantizer(mels, 2, 32, seed=9, iters=5)
    b = fit_surrogate_quantizer(mels, 2, 32, seed=9, iters=5)
    np.testing.assert_array_equal(a.codebooks, b.codebooks)


def test_pitch_on_sine():
    aux = extract_aux(tone(200))
    interior = slice(3, -3)
    assert abs(np.median(aux.pitch[aux.voiced]) - 200) <= 4
    assert np.all(aux.pov[interior] >= 0.9)


def test_white_noise_unvoiced():
    aux = extract_aux(np.random.default_rng(0).normal(size=SR) * 0.3)
    assert np.mean(aux.pov < 0.5) >= 0.8


def test_digital_silence():
    aux = extract_aux(np.zeros(SR // 2))
    assert np.all(aux.energy == -11.5)
    assert np.all(aux.pov == 0) and np.all(aux.pitch == 0)


def test_chirp_pitch_increases():
    t = np.arange(SR) / SR
    f = 90 * np.exp(np.log(3.0) * t)
    aux = extract_aux(0.5 * np.sin(2 * np.pi * np.cumsum(f) / SR))
    p = aux.pitch[aux.voiced]
    assert len(p) > 90
    # allow one frame of jitter
    assert np.all(p[2:] > p[:-2])


def test_energy_is_log_rms():
    aux = extract_aux(tone(300, amp=0.5))
    # interior frame RMS of a sine with amplitude a is a / sqrt(2), up to windowing edge effects
    assert abs(np.median(aux.energy) - math.log(0.5 / math.sqrt(2))) < 0.02


def test_profile_single_embedding():
    e = np.random.default_rng(0).normal(size=192)
    e /= np.linalg.norm(e)
    aux = AuxFeatureSeq(np.array([[100.0, -3, 0.9], [0.0, -5, 0.1]]))
    p = build_speaker_profile("s", [e], [aux])
    np.testing.assert_allclose(p.embedding, e, atol=1e-12)
    assert abs(p.logf0_mean - math.log(100)) < 1e-12
    assert p.logf0_std == 0 and p.n_voiced_frames == 1


def test_profile_degenerate():
    e = np.ones(4) / 2
    aux = AuxFeatureSeq(np.array([[100.0, -3, 0.9]]))
    with pytest.raises(DegenerateEmbedding):
        build_speaker_profile("s", [e, -e], [aux])
    with pytest.raises(NoVoicedFrames):
        build_speaker_profile("s", [e], [AuxFeatureSeq(np.array([[0.0, -3, 0.1]]))])


def test_profile_stats_two_pass_oracle(tmp_path):
    rng = np.random.default_rng(5)
    embs = [v / np.linalg.norm(v) for v in rng.normal(size=(7, 192))]
    auxes = []
    for _ in range(7):
        pitch = np.where(rng.random(50) < 0.6, rng.uniform(80, 300, 50), 0.0)
        auxes.append(AuxFeatureSeq(np.stack([pitch, rng.normal(size=50), rng.random(50)], axis=1)))
    p = build_speaker_profile("s", embs, auxes)
    logs = [math.log(x) for a in auxes for x in a.pitch if x > 0]
    mean = sum(logs) / len(logs)
    std = math.sqrt(sum((x - mean) ** 2 for x in logs) / len(logs))
    assert abs(p.logf0_mean - mean) < 1e-9
    assert abs(p.logf0_std - std) < 1e-9
    assert abs(np.linalg.norm(p.embedding) - 1) < 1e-6
    save_profiles({"s": p}, tmp_path / "p.json")
    back = load_profiles(tmp_path / "p.json")["s"]
    np.testing.assert_allclose(back.embedding, p.embedding)
    assert back.logf0_std == p.logf0_std


def test_surrogate_embedding_unit_norm_and_speaker_sensitive(synthetic_mels):
    embs = [surrogate_speaker_embedding(w) for w, _ in synthetic_mels[:12]]
    assert all(e.shape == (192,) and abs(np.linalg.norm(e) - 1) < 1e-9 for e in embs)
    # utterances 0 and 6 share a speaker; 0 and 1 do not
    same = embs[0] @ embs[6]
    diff = embs[0] @ embs[1]
    assert same > diff
