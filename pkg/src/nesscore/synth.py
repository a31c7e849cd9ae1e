"""Waveform synthesis: timed register writes -> 44.1 kHz PCM.

The renderer drives the same register state machine used for score
extraction, adds per-channel oscillators (duty sequencer, triangle
staircase, noise LFSR) clocked at the CPU rate, and folds the channel
levels through the console's nonlinear mixer.  Waveforms are naive
(no band-limiting), which is exactly how the hardware aliases.

``score_to_writes`` is the inverse path: it schedules the minimal register
writes that make an expressive score come out of ``extract_timeline``
unchanged.
"""

import io
import wave
from dataclasses import dataclass, field

import numpy as np

from . import apu
from .score import (
    SAMPLE_RATE,
    ExpressiveScore,
    frame_sample_index,
    score_total_samples,
)
from .vgm import TimedWrite, TimedWriteStream

DUTY_SEQUENCES = (
    (0, 1, 0, 0, 0, 0, 0, 0),   # 12.5%
    (0, 1, 1, 0, 0, 0, 0, 0),   # 25%
    (0, 1, 1, 1, 1, 0, 0, 0),   # 50%
    (1, 0, 0, 1, 1, 1, 1, 1),   # 25% negated
)

TRIANGLE_SEQUENCE = tuple(range(15, -1, -1)) + tuple(range(16))

# Noise timer periods in CPU cycles, indexed by the $400E period field (NTSC).
NOISE_PERIODS = (
    4, 8, 16, 32, 64, 96, 128, 160, 202, 254, 380, 508, 762, 1016, 2034, 4068,
)

_DUTY_NP = np.array(DUTY_SEQUENCES, dtype=np.int64)
_TRI_NP = np.array(TRIANGLE_SEQUENCE, dtype=np.int64)


def lfsr_step(register: int, mode: int) -> int:
    """Advance the 15-bit noise shift register one step."""
    tap = (register >> 6) if mode else (register >> 1)
    feedback = (register ^ tap) & 1
    return (register >> 1) | (feedback << 14)


def _pulse_level(total: int) -> float:
    return 0.0 if total == 0 else 95.88 / (8128.0 / total + 100.0)


def _tnd_level(t: int, n: int) -> float:
    if t == 0 and n == 0:
        return 0.0
    return 159.79 / (1.0 / (t / 8227.0 + n / 12241.0) + 100.0)


def mix(p1: int, p2: int, t: int, n: int) -> float:
    """Nonlinear four-channel mix, centered so silence is exactly 0.

    The sampler term of the triangle/noise group is pinned to zero.  The
    doubled sum can slightly exceed 1 at pathological all-max levels, so the
    result is clamped into [-1, 1].
    """
    amplitude = 2.0 * (_pulse_level(p1 + p2) + _tnd_level(t, n))
    return min(1.0, max(-1.0, amplitude))


_PULSE_MIX = np.array([_pulse_level(s) for s in range(31)])
_TND_MIX = np.array([[_tnd_level(t, n) for n in range(16)] for t in range(16)])


@dataclass
class PcmBuffer:
    """Mono float PCM at 44.1 kHz, samples within [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE


@dataclass
class OscillatorBank:
    """Waveform-phase state for the four voices.

    Channel timers run at the CPU rate (~40.58 cycles per audio sample);
    each channel keeps its sequence position plus the cycles already spent
    inside the current step so phase is exact across segment boundaries.
    """

    pulse_phase: list[int] = field(default_factory=lambda: [0, 0])
    pulse_spent: list[int] = field(default_factory=lambda: [0, 0])
    tri_phase: int = 0
    tri_spent: int = 0
    lfsr: int = 1
    lfsr_spent: int = 0


def _cycle_offsets(start: int, end: int) -> np.ndarray:
    """Elapsed CPU cycles at each sample boundary of [start, end]."""
    idx = np.arange(start, end + 1, dtype=np.int64)
    cycles = (idx * apu.CPU_HZ) // SAMPLE_RATE
    return cycles - cycles[0]


def _render_pulse(ch, bank: OscillatorBank, i: int, elapsed: np.ndarray) -> np.ndarray:
    vol = ch.output_volume()
    sounding = ch.enabled and ch.length_counter > 0 and vol > 0 and not ch.sweep_muted()
    period = 2 * (ch.timer_period + 1)  # 8-step sequencer moves every 2(t+1) cycles
    n = len(elapsed) - 1
    if sounding:
        steps = (bank.pulse_spent[i] + elapsed[:n]) // period
        idx = (bank.pulse_phase[i] + steps) & 7
        out = _DUTY_NP[ch.duty][idx] * vol
    else:
        out = np.zeros(n, dtype=np.int64)
    advanced = bank.pulse_spent[i] + int(elapsed[n])
    bank.pulse_phase[i] = (bank.pulse_phase[i] + advanced // period) & 7
    bank.pulse_spent[i] = advanced % period
    return out


def _render_triangle(ch, bank: OscillatorBank, elapsed: np.ndarray) -> np.ndarray:
    n = len(elapsed) - 1
    sounding = (ch.enabled and ch.length_counter > 0 and ch.linear_counter > 0
                and ch.timer_period >= 2)
    if not sounding:
        # sequencer is gated: phase freezes, channel contributes silence
        return np.zeros(n, dtype=np.int64)
    period = ch.timer_period + 1
    steps = (bank.tri_spent + elapsed[:n]) // period
    idx = (bank.tri_phase + steps) % 32
    out = _TRI_NP[idx]
    advanced = bank.tri_spent + int(elapsed[n])
    bank.tri_phase = (bank.tri_phase + advanced // period) % 32
    bank.tri_spent = advanced % period
    return out


def _render_noise(ch, bank: OscillatorBank, elapsed: np.ndarray) -> np.ndarray:
    n = len(elapsed) - 1
    vol = ch.output_volume()
    if not (ch.enabled and ch.length_counter > 0 and vol > 0):
        # LFSR only advances while audible
        return np.zeros(n, dtype=np.int64)
    period = NOISE_PERIODS[ch.period_index]
    steps = (bank.lfsr_spent + elapsed[:n]) // period
    total_steps = int((bank.lfsr_spent + elapsed[n]) // period)
    bits = np.empty(total_steps + 1, dtype=np.int64)
    reg = bank.lfsr
    mode = ch.mode
    bits[0] = reg & 1
    for j in range(1, total_steps + 1):
        reg = lfsr_step(reg, mode)
        bits[j] = reg & 1
    out = np.where(bits[steps] == 0, vol, 0)
    bank.lfsr = reg
    bank.lfsr_spent = int((bank.lfsr_spent + elapsed[n]) % period)
    return out


def render_writes(stream: TimedWriteStream) -> PcmBuffer:
    """Render a timed write stream to PCM, one sample per stream sample."""
    total = int(stream.total_samples)
    out = np.zeros(total)
    bank = OscillatorBank()
    for start, end, state, writes in apu.iter_segments(stream):
        for reg, _val in writes:
            if reg == 0x4003:
                bank.pulse_phase[0], bank.pulse_spent[0] = 0, 0
            elif reg == 0x4007:
                bank.pulse_phase[1], bank.pulse_spent[1] = 0, 0
        elapsed = _cycle_offsets(start, end)
        p1 = _render_pulse(state.p1, bank, 0, elapsed)
        p2 = _render_pulse(state.p2, bank, 1, elapsed)
        tr = _render_triangle(state.tr, bank, elapsed)
        no = _render_noise(state.no, bank, elapsed)
        amp = 2.0 * (_PULSE_MIX[p1 + p2] + _TND_MIX[tr, no])
        out[start:end] = amp
    np.clip(out, -1.0, 1.0, out=out)
    return PcmBuffer(samples=out)


# ---------------------------------------------------------------------------
# score -> register writes

_LENGTH_LOAD_MAX = 1 << 3   # length table index 1 = 254, the largest entry


def score_to_writes(score: ExpressiveScore) -> TimedWriteStream:
    """Schedule the register writes that realize a score on the APU.

    Pulses run in constant-volume mode with the length halt bit set, so a
    note sustains until the enable mask drops it; $4003/$4007 are written
    only when the note changes, keeping pure velocity/timbre updates free of
    phase-reset clicks.  Triangle onsets are followed by a $4017 write whose
    immediate sequencer clock loads the linear counter within the same
    sample.  Sweep units get negate-mode setup ($4001/$4005 = 0x08) before
    first use so low notes are not force-muted by the target-overflow rule.
    """
    frames = score.frames
    writes: list[TimedWrite] = []
    total = score_total_samples(len(frames), score.rate_hz)

    def emit(sample, reg, value):
        writes.append(TimedWrite(sample, reg, value))

    prev = None
    prev_mask = None
    sweep_ready = [False, False]
    for k, f in enumerate(frames):
        s = frame_sample_index(k, score.rate_hz)
        mask = ((f.p1_note > 0) | ((f.p2_note > 0) << 1)
                | ((f.tr_note > 0) << 2) | ((f.no_note > 0) << 3))
        if mask != prev_mask:
            emit(s, 0x4015, mask)
            prev_mask = mask

        for i, (note, vel, timbre, old) in enumerate((
            (f.p1_note, f.p1_vel, f.p1_timbre,
             (prev.p1_note, prev.p1_vel, prev.p1_timbre) if prev else (0, 0, 0)),
            (f.p2_note, f.p2_vel, f.p2_timbre,
             (prev.p2_note, prev.p2_vel, prev.p2_timbre) if prev else (0, 0, 0)),
        )):
            base = 0x4000 + 4 * i
            if note == 0:
                continue
            if not sweep_ready[i]:
                emit(s, base + 1, 0x08)
                sweep_ready[i] = True
            control = (timbre << 6) | 0x30 | vel
            if note != old[0]:
                timer = apu.midi_to_timer(note, "pulse")
                emit(s, base + 0, control)
                emit(s, base + 2, timer & 0xFF)
                emit(s, base + 3, _LENGTH_LOAD_MAX | (timer >> 8))
            elif (vel, timbre) != old[1:]:
                emit(s, base + 0, control)

        tr_old = prev.tr_note if prev else 0
        tr_onset = False
        if f.tr_note > 0 and f.tr_note != tr_old:
            timer = apu.midi_to_timer(f.tr_note, "triangle")
            emit(s, 0x4008, 0xFF)
            emit(s, 0x400A, timer & 0xFF)
            emit(s, 0x400B, _LENGTH_LOAD_MAX | (timer >> 8))
            tr_onset = tr_old == 0
        elif f.tr_note == 0 and tr_old > 0:
            emit(s, 0x4008, 0x80)

        no_old = (prev.no_note, prev.no_vel, prev.no_timbre) if prev else (0, 0, 0)
        if f.no_note > 0:
            if f.no_note != no_old[0]:
                emit(s, 0x400C, 0x30 | f.no_vel)
                emit(s, 0x400E, (f.no_timbre << 7) | (16 - f.no_note))
                emit(s, 0x400F, _LENGTH_LOAD_MAX)
            else:
                if f.no_vel != no_old[1]:
                    emit(s, 0x400C, 0x30 | f.no_vel)
                if f.no_timbre != no_old[2]:
                    emit(s, 0x400E, (f.no_timbre << 7) | (16 - f.no_note))

        if tr_onset:
            # immediate 5-step clock reloads the linear counter at this sample
            emit(s, 0x4017, 0x80)
        prev = f

    if not frames:
        emit(0, 0x4015, 0x00)
    return TimedWriteStream(writes=writes, total_samples=total)


def render_score(score: ExpressiveScore) -> PcmBuffer:
    return render_writes(score_to_writes(score))


# ---------------------------------------------------------------------------
# WAV output

def write_wav(buffer: PcmBuffer) -> bytes:
    """Encode as RIFF/WAVE, PCM signed 16-bit little-endian, mono."""
    quantized = np.clip(np.rint(buffer.samples * 32767.0), -32767, 32767)
    pcm = quantized.astype("<i2").tobytes()
    bio = io.BytesIO()
    with wave.open(bio, "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(buffer.sample_rate)
        wav.writeframes(pcm)
    return bio.getvalue()
