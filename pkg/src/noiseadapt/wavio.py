"""Mono 16-bit PCM WAV reading and writing."""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np

from .errors import FormatError
from .signal_corpus import Utterance

PCM16_SCALE = 32768.0


def wav_write(u: Utterance, path) -> None:
    """Write ``u.samples`` (clipped to [-1, 1)) as mono PCM16."""
    x = np.clip(np.asarray(u.samples, dtype=float), -1.0, 32767.0 / PCM16_SCALE)
    pcm = np.round(x * PCM16_SCALE).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(u.sample_rate))
        w.writeframes(pcm.tobytes())


def wav_read(path) -> Utterance:
    """Read a mono PCM16 file into an unlabelled :class:`Utterance`."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate = w.getnchannels(), w.getsampwidth(), w.getframerate()
            n = w.getnframes()
            raw = w.readframes(n)
    except (wave.Error, EOFError) as exc:
        raise FormatError(f"{path}: {exc}") from None
    if channels != 1:
        raise FormatError(f"{path}: expected mono, got {channels} channels")
    if width != 2:
        raise FormatError(f"{path}: unsupported sample width {8 * width} bits")
    if len(raw) != 2 * n:
        raise FormatError(f"{path}: truncated data chunk")
    samples = np.frombuffer(raw, dtype="<i2").astype(float) / PCM16_SCALE
    return Utterance(samples, rate, [], None, path.stem)
