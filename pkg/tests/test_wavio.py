import struct
import wave

import numpy as np
import pytest

from noiseadapt import signal_corpus as sc
from noiseadapt.errors import FormatError
from noiseadapt.wavio import wav_read, wav_write


def _utt(x, fs=16000):
    return sc.Utterance(np.asarray(x, float), fs, [], sc.CLEAN)


def test_ramp_round_trip(tmp_path):
    x = np.linspace(-1.0, 0.999, 5000)
    wav_write(_utt(x), tmp_path / "r.wav")
    u = wav_read(tmp_path / "r.wav")
    assert u.sample_rate == 16000
    assert np.max(np.abs(u.samples - x)) <= 2 ** -15


def test_empty_round_trip(tmp_path):
    wav_write(_utt([]), tmp_path / "e.wav")
    u = wav_read(tmp_path / "e.wav")
    assert len(u.samples) == 0


def test_header_bytes_follow_riff_layout(tmp_path):
    n = 10
    wav_write(_utt(np.zeros(n)), tmp_path / "h.wav")
    raw = (tmp_path / "h.wav").read_bytes()
    expected = (b"RIFF" + struct.pack("<I", 36 + 2 * n) + b"WAVE"
                + b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, 16000, 32000, 2, 16)
                + b"data" + struct.pack("<I", 2 * n))
    assert raw[:44] == expected
    assert len(raw) == 44 + 2 * n


def test_rejects_stereo(tmp_path):
    p = tmp_path / "s.wav"
    with wave.open(str(p), "wb") as w:
        w.setnchannels(2)
        w.setsampwidth(2)
        w.setframerate(16000)
        w.writeframes(bytes(8))
    with pytest.raises(FormatError):
        wav_read(p)


def test_rejects_8_bit(tmp_path):
    p = tmp_path / "b.wav"
    with wave.open(str(p), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(1)
        w.setframerate(16000)
        w.writeframes(bytes(8))
    with pytest.raises(FormatError):
        wav_read(p)


def test_rejects_malformed_header(tmp_path):
    p = tmp_path / "m.wav"
    p.write_bytes(b"RIFX" + bytes(40))
    with pytest.raises(FormatError):
        wav_read(p)
