"""VGM parsing and emission, checked against the public v1.61 format docs."""

import gzip
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nesscore import vgm
from nesscore.vgm import (
    ApuWrite,
    BadMagic,
    DataBlock,
    DualChipUnsupported,
    EndOfData,
    OffsetOverflow,
    TimedWrite,
    TimedWriteStream,
    TruncatedFile,
    UnsupportedCommand,
    Wait,
    flatten_to_writes,
    parse_vgm,
    write_vgm,
)


def make_vgm(body: bytes, version: int = 0x161) -> bytes:
    """Header laid out by hand from the public format docs (independent oracle)."""
    header = bytearray(0xC0)
    header[0:4] = b"Vgm "
    struct.pack_into("<I", header, 0x04, 0xC0 + len(body) - 4)
    struct.pack_into("<I", header, 0x08, version)
    struct.pack_into("<I", header, 0x34, 0xC0 - 0x34)
    struct.pack_into("<I", header, 0x84, 1789773)
    return bytes(header) + body


class TestParse:
    def test_header_fields(self):
        doc = parse_vgm(make_vgm(b"\x66"))
        assert doc.version == 0x161
        assert doc.nes_apu_clock_hz == 1789773
        assert doc.data_offset == 0xC0
        assert doc.commands == [EndOfData()]

    def test_wait_16bit(self):
        # 0x012C little-endian = 300
        doc = parse_vgm(make_vgm(bytes((0x61, 0x2C, 0x01, 0x66))))
        assert doc.commands[0] == Wait(300)

    def test_wait_frame_shorthands(self):
        doc = parse_vgm(make_vgm(bytes((0x62, 0x63, 0x70, 0x7F, 0x66))))
        assert doc.commands[:4] == [Wait(735), Wait(882), Wait(1), Wait(16)]

    def test_zero_wait_dropped(self):
        doc = parse_vgm(make_vgm(bytes((0x61, 0x00, 0x00, 0x66))))
        assert doc.commands == [EndOfData()]

    def test_apu_write(self):
        doc = parse_vgm(make_vgm(bytes((0xB4, 0x15, 0x0F, 0x66))))
        assert doc.commands[0] == ApuWrite(0x15, 0x0F)

    def test_data_block_skipped(self):
        body = bytes((0x67, 0x66, 0xC2, 0x04, 0x00, 0x00, 0x00)) + b"\xde\xad\xbe\xef"
        doc = parse_vgm(make_vgm(body + bytes((0xB4, 0x00, 0x3F, 0x66))))
        assert doc.commands[0] == DataBlock(0xC2, 4)
        assert doc.commands[1] == ApuWrite(0x00, 0x3F)

    def test_gzip_transparent(self):
        plain = make_vgm(bytes((0x62, 0x66)))
        assert parse_vgm(gzip.compress(plain)).commands == parse_vgm(plain).commands

    def test_bad_magic(self):
        with pytest.raises(BadMagic):
            parse_vgm(b"\x00" + make_vgm(b"\x66")[1:])

    def test_truncated_header(self):
        with pytest.raises(TruncatedFile):
            parse_vgm(b"Vgm \x00\x00")

    def test_missing_terminator(self):
        with pytest.raises(TruncatedFile):
            parse_vgm(make_vgm(bytes((0x62,))))

    def test_truncated_wait_operand(self):
        with pytest.raises(TruncatedFile):
            parse_vgm(make_vgm(bytes((0x61, 0x10))))

    def test_unsupported_command_names_offset(self):
        with pytest.raises(UnsupportedCommand) as exc:
            parse_vgm(make_vgm(bytes((0x51, 0x10, 0x20, 0x66))))
        assert "0xc0" in str(exc.value)

    def test_dual_chip_rejected(self):
        with pytest.raises(DualChipUnsupported):
            parse_vgm(make_vgm(bytes((0xB4, 0x80, 0x00, 0x66))))

    def test_register_offset_out_of_range(self):
        with pytest.raises(UnsupportedCommand):
            parse_vgm(make_vgm(bytes((0xB4, 0x18, 0x00, 0x66))))

    def test_old_version_data_at_0x40(self):
        header = bytearray(0x40)
        header[0:4] = b"Vgm "
        struct.pack_into("<I", header, 0x08, 0x101)
        doc = parse_vgm(bytes(header) + b"\x66")
        assert doc.data_offset == 0x40
        assert doc.nes_apu_clock_hz == 0


class TestFlatten:
    def test_wait_then_write(self):
        doc = parse_vgm(make_vgm(bytes((0x61, 0x64, 0x00, 0xB4, 0x00, 0x3F, 0x66))))
        stream = flatten_to_writes(doc)
        assert stream.writes == [TimedWrite(100, 0x4000, 0x3F)]
        assert stream.total_samples == 100

    def test_write_at_zero(self):
        stream = flatten_to_writes(parse_vgm(make_vgm(bytes((0xB4, 0x15, 0x0F, 0x66)))))
        assert stream.writes == [TimedWrite(0, 0x4015, 0x0F)]
        assert stream.total_samples == 0

    def test_waits_only(self):
        stream = flatten_to_writes(parse_vgm(make_vgm(bytes((0x62, 0x62, 0x66)))))
        assert stream.writes == []
        assert stream.total_samples == 1470

    def test_monotone_offsets(self):
        body = bytes((0xB4, 0x00, 1, 0x70, 0xB4, 0x01, 2, 0x62, 0xB4, 0x02, 3, 0x66))
        stream = flatten_to_writes(parse_vgm(make_vgm(body)))
        offsets = [w.sample_offset for w in stream.writes]
        assert offsets == sorted(offsets) == [0, 1, 736]


class TestWrite:
    def test_empty_stream(self):
        data = write_vgm(TimedWriteStream())
        assert data[-1] == 0x66
        assert len(data) == 0xC0 + 1
        assert flatten_to_writes(parse_vgm(data)) == TimedWriteStream()

    def test_single_write_at_offset_300(self):
        stream = TimedWriteStream([TimedWrite(300, 0x4000, 0xBF)], total_samples=300)
        data = write_vgm(stream)
        assert bytes((0x61, 0x2C, 0x01, 0xB4, 0x00, 0xBF)) in data
        assert flatten_to_writes(parse_vgm(data)) == stream

    def test_write_at_zero_has_no_leading_wait(self):
        stream = TimedWriteStream([TimedWrite(0, 0x4015, 1)], total_samples=10)
        assert write_vgm(stream)[0xC0] == 0xB4

    def test_frame_wait_uses_shorthand(self):
        stream = TimedWriteStream([TimedWrite(735, 0x4015, 1)], total_samples=735)
        assert write_vgm(stream)[0xC0] == 0x62

    def test_offset_overflow(self):
        with pytest.raises(OffsetOverflow):
            write_vgm(TimedWriteStream(total_samples=0x1_0000_0000))

    def test_long_wait_chains(self):
        stream = TimedWriteStream([TimedWrite(200_000, 0x4002, 7)],
                                  total_samples=200_000)
        assert flatten_to_writes(parse_vgm(write_vgm(stream))) == stream


@st.composite
def streams(draw):
    deltas = draw(st.lists(
        st.tuples(st.integers(0, 100_000), st.integers(0, 0x17), st.integers(0, 255)),
        max_size=40))
    writes = []
    offset = 0
    for delta, reg, val in deltas:
        offset += delta
        writes.append(TimedWrite(offset, 0x4000 + reg, val))
    tail = draw(st.integers(0, 100_000))
    return TimedWriteStream(writes, total_samples=offset + tail)


class TestProperties:
    @given(streams())
    @settings(max_examples=150)
    def test_round_trip_identity(self, stream):
        assert flatten_to_writes(parse_vgm(write_vgm(stream))) == stream

    @given(streams())
    @settings(max_examples=60)
    def test_wait_conservation(self, stream):
        doc = parse_vgm(write_vgm(stream))
        waited = sum(c.samples for c in doc.commands if isinstance(c, Wait))
        assert waited == stream.total_samples
