"""Synthetic corpora for tests and smoke runs.

`make_toy_corpus` renders a small 3-language x 2-speaker corpus of
formant-synthesised "speech": each character is a steady phone (harmonic
source through speaker-scaled formants, or shaped noise), words may be
separated by pauses, and ASR hypotheses are noisy copies of the transcript.
Phone boundaries fall on frame boundaries so the ground truth is exact.
"""

from __future__ import annotations

import random
from pathlib import Path

import numpy as np

from .corpus import SpeakerRegistry, Utterance, save_manifest, save_registry, write_wav
from .frontend import TokenSequence, tokenize

ALPHABETS = {
    "hi": "aeiounkmrst",
    "mr": "aeioulnpsvt",
    "te": "aeiouklmnty",
}
VOWELS = set("aeiou")
VOICED_CONS = set("lmnrvy")
SPEAKERS = {
    # speaker: (language, gender, base f0 Hz, formant scale)
    "hi_m": ("hi", "m", 115.0, 1.00),
    "hi_f": ("hi", "f", 215.0, 1.14),
    "mr_m": ("mr", "m", 105.0, 0.97),
    "mr_f": ("mr", "f", 200.0, 1.10),
    "te_m": ("te", "m", 125.0, 1.03),
    "te_f": ("te", "f", 230.0, 1.17),
}


def _phone_formants(ch: str) -> list:
    """(centre Hz, bandwidth Hz, gain) bumps, deterministic per character."""
    r = random.Random(f"phone-{ch}")
    if ch in VOWELS:
        table = {"a": (750, 1250), "e": (450, 2000), "i": (300, 2300), "o": (500, 900), "u": (350, 800)}
        f1, f2 = table[ch]
        return [(f1, 90, 1.0), (f2, 120, 0.6), (2800 + 100 * r.random(), 200, 0.25)]
    f = 250 + 300 * r.random()
    return [(f, 80, 0.6), (1000 + 1500 * r.random(), 200, 0.25)]


def _envelope(freqs, bumps, scale, tilt):
    env = np.zeros_like(freqs)
    for fc, bw, g in bumps:
        env += g * np.exp(-0.5 * ((freqs - fc * scale) / bw) ** 2)
    return (env + 0.01) * np.exp(-freqs / tilt)


def render_utterance(chars_with_pauses, speaker, rng: np.random.Generator, sr=16000, hop=160):
    """chars_with_pauses: list of (symbol or None for pause, n_frames). Returns waveform."""
    lang, gender, f0_base, scale = SPEAKERS[speaker]
    tilt = 2500.0 if gender == "m" else 3000.0
    n = sum(k for _, k in chars_with_pauses) * hop
    # slow declining f0 with a little vibrato-like drift
    t = np.arange(n) / sr
    f0 = f0_base * (1.08 - 0.12 * t / max(t[-1], 1e-3)) * (1 + 0.02 * np.sin(2 * np.pi * 3.1 * t + rng.uniform(0, 6)))
    phase = 2 * np.pi * np.cumsum(f0) / sr
    n_harm = int(4000 // (f0_base * 0.9))
    amps = np.zeros((n_harm, n))
    noise_gain = np.zeros(n)
    noise_centre = np.zeros(n)
    pos = 0
    for sym, k in chars_with_pauses:
        seg = slice(pos, pos + k * hop)
        pos += k * hop
        if sym is None:
            continue
        if sym in VOWELS or sym in VOICED_CONS:
            bumps = _phone_formants(sym)
            level = 1.0 if sym in VOWELS else 0.5
            for h in range(n_harm):
                fr = (h + 1) * f0[seg]
                amps[h, seg] = level * _envelope(fr, bumps, scale, tilt)
        else:
            noise_gain[seg] = 0.25
            noise_centre[seg] = 2500 + 3000 * random.Random(f"noise-{sym}").random()
    # 5 ms smoothing of the control tracks avoids clicks at phone edges
    kern = np.ones(80) / 80
    amps = np.stack([np.convolve(a, kern, mode="same") for a in amps])
    noise_gain = np.convolve(noise_gain, kern, mode="same")
    voiced = np.sum(amps * np.sin(np.arange(1, n_harm + 1)[:, None] * phase[None, :]), axis=0)
    noise = rng.normal(size=n)
    spec = np.fft.rfft(noise)
    freqs = np.fft.rfftfreq(n, 1 / sr)
    centre = np.median(noise_centre[noise_centre > 0]) if np.any(noise_centre > 0) else 4000
    spec *= np.exp(-0.5 * ((freqs - centre) / 900) ** 2)
    shaped = np.fft.irfft(spec, n)
    shaped /= np.std(shaped) + 1e-9
    x = 0.12 * voiced + noise_gain * 0.3 * shaped + 1e-4 * rng.normal(size=n)
    return (0.5 * x / max(np.max(np.abs(x)), 1e-9)).astype(np.float32)


def _random_word(rng: random.Random, alphabet: str) -> str:
    vowels = [c for c in alphabet if c in VOWELS]
    cons = [c for c in alphabet if c not in VOWELS]
    n = rng.randint(2, 5)
    return "".join(rng.choice(cons) if i % 2 == 0 else rng.choice(vowels) for i in range(n))


def _corrupt(text: str, rate: float, rng: random.Random, alphabet: str) -> str:
    out = []
    for ch in text:
        r = rng.random()
        if ch == " " or r >= rate:
            out.append(ch)
        elif r < rate / 3:
            continue
        elif r < 2 * rate / 3:
            out.append(rng.choice(alphabet))
        else:
            out.extend([ch, rng.choice(alphabet)])
    return "".join(out)


def make_utterance_plan(rng: random.Random, alphabet: str, min_s=2.0, max_s=4.0, hop_s=0.01, pause_prob=0.4):
    """Pick words, per-character frame counts and pauses whose total lies in [min_s, max_s]."""
    while True:
        words, plan, pauses = [], [], []
        total = 0
        while total * hop_s < min_s:
            w = _random_word(rng, alphabet)
            if words:
                p = rng.random() < pause_prob
                pauses.append(p)
                if p:
                    k = rng.randint(12, 25)
                    plan.append((None, k))
                    total += k
            words.append(w)
            for ch in w:
                k = rng.randint(8, 14) if ch in VOWELS else rng.randint(5, 9)
                plan.append((ch, k))
                total += k
        if total * hop_s <= max_s:
            return " ".join(words), plan, pauses


def make_toy_corpus(out_dir, n_per_speaker=16, seed=0, sample_rate=16000, hop=160, min_s=2.0, max_s=4.0):
    """Write wav/, hyp/, manifest.tsv, speakers.tsv and sil_truth.tsv under out_dir.

    Returns the list of utterances.
    """
    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    (out / "hyp").mkdir(exist_ok=True)
    reg = SpeakerRegistry()
    utts, truth = [], []
    for spk in sorted(SPEAKERS):
        lang, gender, _, _ = SPEAKERS[spk]
        reg.add(spk, lang, gender)
        rng = random.Random(f"{seed}-{spk}")
        nrng = np.random.default_rng(rng.randrange(2**32))
        for i in range(n_per_speaker):
            utt_id = f"{spk}_{i:03d}"
            text, plan, pauses = make_utterance_plan(rng, ALPHABETS[lang], min_s, max_s, hop / sample_rate)
            wav = render_utterance(plan, spk, nrng, sample_rate, hop)
            write_wav(out / "wav" / f"{utt_id}.wav", wav, sample_rate)
            hyp = _corrupt(text, rng.uniform(0.0, 0.25), rng, ALPHABETS[lang])
            (out / "hyp" / f"{utt_id}.txt").write_text(hyp + "\n", encoding="utf-8")
            utts.append(Utterance(utt_id, spk, lang, f"wav/{utt_id}.wav", sample_rate, len(wav) / sample_rate, text))
            truth.append((utt_id, pauses))
    save_manifest(utts, out / "manifest.tsv")
    save_registry(reg, out / "speakers.tsv")
    with open(out / "sil_truth.tsv", "w", encoding="utf-8") as f:
        for utt_id, pauses in truth:
            f.write(f"{utt_id}\t{','.join('1' if p else '0' for p in pauses)}\n")
    return utts


TOY_CONFIG = """\
# desk-scale settings for the synthetic corpus
[paths]
manifest = {root}/manifest.tsv
registry = {root}/speakers.tsv
hyp_dir = {root}/hyp
store = {root}/store
ckpt = {root}/ckpt
out = {root}/out

[features]
codebook_groups = 2
codebook_size = 64
kmeans_iters = 15

[selection]
budget1_s = 40
budget2_s = 30

[silpred]
blocks = 1
width = 64
heads = 2
ff_width = 128
epochs = 15

[am]
enc_blocks = 2
dec_blocks = 2
width = 64
heads = 2
ff_width = 128
dur_width = 64
batch_size = 8
max_steps = 150
lr = 0.002

[voc]
code_dim = 32
aux_dim = 16
enc_width = 64
enc_blocks = 2
gen_channels = 64
mode = lite
max_steps = 100
segment_frames = 32
batch_size = 4
"""


def write_toy_config(root) -> Path:
    path = Path(root) / "toy.cfg"
    path.write_text(TOY_CONFIG.format(root=Path(root).resolve()), encoding="utf-8")
    return path


def rule_boundary_corpus(n=200, seed=0, alphabet="abcdefgx", language_id="hi"):
    """(TokenSequence, labels) pairs where a boundary is silent iff the word before ends in 'x'."""
    rng = random.Random(seed)
    others = alphabet.replace("x", "")
    data = []
    for _ in range(n):
        words = []
        for _ in range(rng.randint(2, 7)):
            w = "".join(rng.choice(others) for _ in range(rng.randint(1, 4)))
            if rng.random() < 0.5:
                w += "x"
            words.append(w)
        seq: TokenSequence = tokenize(" ".join(words), language_id)
        data.append((seq, [w.endswith("x") for w in words[:-1]]))
    return data
