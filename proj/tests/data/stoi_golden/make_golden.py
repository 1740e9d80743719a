#!/usr/bin/env python3
"""Generates the golden intelligibility fixtures.

Synthesizes five reference/estimate pairs at 10 kHz, writes them as 16-bit
WAV files, and computes the expected score with a standalone NumPy
implementation of the one-third-octave short-time correlation measure.
The score is computed from the quantized samples, i.e. exactly the values a
consumer reads back from the WAV files.
"""

import numpy as np
import wave
from pathlib import Path

FS = 10000
FRAME = 256
HOP = 128
NFFT = 512
NBANDS = 15
FMIN = 150.0
SEG = 30
DYN = 40.0
BETA = -15.0

WINDOW = 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(1, FRAME + 1) / (FRAME + 1)))


def frames(x):
    m = (len(x) - FRAME) // HOP + 1
    return np.stack([x[i * HOP:i * HOP + FRAME] * WINDOW for i in range(m)])


def remove_silent(x, y):
    fx, fy = frames(x), frames(y)
    energy = 10.0 * np.log10(np.sum(fx ** 2, axis=1) + 1e-300)
    keep = energy > energy.max() - DYN
    fx, fy = fx[keep], fy[keep]
    n = (len(fx) - 1) * HOP + FRAME
    ox, oy = np.zeros(n), np.zeros(n)
    for i in range(len(fx)):
        ox[i * HOP:i * HOP + FRAME] += fx[i]
        oy[i * HOP:i * HOP + FRAME] += fy[i]
    return ox, oy


def band_edges():
    f = np.arange(NFFT // 2 + 1) * FS / NFFT
    edges = []
    for j in range(NBANDS):
        cf = FMIN * 2.0 ** (j / 3.0)
        k1 = int(np.argmin(np.abs(f - cf * 2.0 ** (-1.0 / 6.0))))
        k2 = int(np.argmin(np.abs(f - cf * 2.0 ** (1.0 / 6.0))))
        edges.append((k1, k2))
    return edges


def band_spec(x):
    spec = np.fft.rfft(frames(x), NFFT, axis=1)
    return np.stack([np.sqrt(np.sum(np.abs(spec[:, k1:k2]) ** 2, axis=1))
                     for k1, k2 in band_edges()])


def stoi(x, y):
    x, y = remove_silent(x, y)
    xb, yb = band_spec(x), band_spec(y)
    clip = 1.0 + 10.0 ** (-BETA / 20.0)
    total, count = 0.0, 0
    for m in range(SEG, xb.shape[1] + 1):
        xs = xb[:, m - SEG:m]
        ys = yb[:, m - SEG:m]
        alpha = np.sqrt(np.sum(xs ** 2, axis=1, keepdims=True) /
                        (np.sum(ys ** 2, axis=1, keepdims=True) + 1e-300))
        yc = np.minimum(alpha * ys, clip * xs)
        xm = xs - xs.mean(axis=1, keepdims=True)
        ym = yc - yc.mean(axis=1, keepdims=True)
        den = np.linalg.norm(xm, axis=1) * np.linalg.norm(ym, axis=1)
        d = np.where(den > 0.0, np.sum(xm * ym, axis=1) / np.maximum(den, 1e-300), 0.0)
        total += d.sum()
        count += NBANDS
    return total / count


def speech_like(rng, seconds=3.0, f0=120.0):
    n = int(seconds * FS)
    t = np.arange(n) / FS
    pitch = f0 * (1.0 + 0.03 * np.sin(2 * np.pi * 4.5 * t))
    phase = 2 * np.pi * np.cumsum(pitch) / FS
    x = np.zeros(n)
    for h in range(1, 30):
        if h * f0 >= FS / 2 - 100:
            break
        gain = 1.0 / h * (1.0 + 2.0 * np.exp(-((h * f0 - 700) / 300) ** 2)
                          + 1.2 * np.exp(-((h * f0 - 1800) / 400) ** 2))
        x += gain * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    # Syllabic amplitude modulation with pauses.
    env = np.zeros(n)
    pos = 0
    while pos < n:
        syl = int(rng.uniform(0.12, 0.3) * FS)
        seg = np.sin(np.pi * np.arange(min(syl, n - pos)) / syl) ** 2
        env[pos:pos + len(seg)] = seg
        pos += syl + int(rng.uniform(0.0, 0.08) * FS)
    x *= env
    return 0.5 * x / np.max(np.abs(x))


def quantize(x):
    q = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    return q, q.astype(np.float64) / 32768.0


def write_wav(path, q):
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(FS)
        f.writeframes(q.tobytes())


def main():
    out_dir = Path(__file__).parent
    rng = np.random.default_rng(2024)
    snrs_db = [20.0, 10.0, 5.0, 0.0, -5.0]
    lines = []
    for i, snr in enumerate(snrs_db):
        ref = speech_like(rng, f0=100.0 + 25.0 * i)
        noise = rng.standard_normal(len(ref))
        noise *= np.sqrt(np.mean(ref ** 2) / np.mean(noise ** 2)) * 10.0 ** (-snr / 20.0)
        est = ref + noise
        est *= 0.5 / np.max(np.abs(est))
        qr, xr = quantize(ref)
        qe, xe = quantize(est)
        write_wav(out_dir / f"pair{i}_ref.wav", qr)
        write_wav(out_dir / f"pair{i}_est.wav", qe)
        lines.append(f"pair{i} {stoi(xr, xe):.10f}")
    (out_dir / "golden.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))


if __name__ == "__main__":
    main()
