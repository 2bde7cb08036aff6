#!/usr/bin/env python3
"""Independent generator for the golden vectors under testdata/.

Uses a hand-written CBOR head encoder and bit-at-a-time CRC routines that
share no code with the C++ implementation. Run from the repository root:

    python3 tests/oracles/gen_vectors.py
"""
import os
import struct


def head(major, value):
    if value < 24:
        return bytes([(major << 5) | value])
    for info, fmt in ((24, ">B"), (25, ">H"), (26, ">I"), (27, ">Q")):
        if value < (1 << (8 * struct.calcsize(fmt))):
            return bytes([(major << 5) | info]) + struct.pack(fmt, value)
    raise ValueError(value)


def uint(v):
    return head(0, v)


def bstr(b):
    return head(2, len(b)) + b


def tstr(s):
    b = s.encode()
    return head(3, len(b)) + b


def array(*items):
    return head(4, len(items)) + b"".join(items)


def bit_crc(data, width, poly, init, xorout):
    """Reflected-input/output CRC computed MSB-first on bit-reversed data."""
    def rev(x, n):
        return int(format(x, "0%db" % n)[::-1], 2)
    crc = init
    top = 1 << (width - 1)
    mask = (1 << width) - 1
    for byte in data:
        crc ^= rev(byte, 8) << (width - 8)
        for _ in range(8):
            crc = ((crc << 1) ^ poly) & mask if crc & top else (crc << 1) & mask
    return rev(crc, width) ^ xorout


def crc16_x25(data):
    return bit_crc(data, 16, 0x1021, 0xFFFF, 0xFFFF)


def crc32c(data):
    return bit_crc(data, 32, 0x1EDC6F41, 0xFFFFFFFF, 0xFFFFFFFF)


def crc_bytes(kind, block):
    if kind == 1:
        return struct.pack(">H", crc16_x25(block))
    return struct.pack(">I", crc32c(block))


def with_crc(kind, items):
    """Encodes a block array whose final item is the CRC of the block."""
    size = 2 if kind == 1 else 4
    zeroed = array(*items, bstr(b"\x00" * size))
    return array(*items, bstr(crc_bytes(kind, zeroed)))


def dtn(ssp):
    return array(uint(1), tstr(ssp))


DTN_NONE = array(uint(1), uint(0))


def minimal_bundle():
    primary = array(uint(7), uint(0), uint(0), DTN_NONE, DTN_NONE, DTN_NONE,
                    array(uint(0), uint(0)), uint(0))
    payload = array(uint(1), uint(1), uint(0), uint(0), bstr(b""))
    return b"\x9f" + primary + payload + b"\xff"


def crc_bundle(kind):
    primary = with_crc(kind, [uint(7), uint(0), uint(kind), dtn("//b.dtn/app"),
                              dtn("//a.dtn/src"), dtn("//a.dtn/src"),
                              array(uint(1000), uint(1)), uint(60000)])
    payload = with_crc(kind, [uint(1), uint(1), uint(0), uint(kind), bstr(b"hello")])
    return b"\x9f" + primary + payload + b"\xff"


def main():
    root = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "..", "testdata")

    def put(rel, data):
        path = os.path.join(root, rel)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        with open(path, "w") as f:
            f.write(data.hex() + "\n")

    put("bp7/minimal.hex", minimal_bundle())
    put("bp7/crc16_hello.hex", crc_bundle(1))
    put("bp7/crc32c_hello.hex", crc_bundle(2))
    put("mtcp/frame_20.hex", bstr(bytes(range(20))))
    put("mtcp/frame_300.hex", bstr(bytes(i % 256 for i in range(300))))
    keepalive = array(uint(6), head(5, 0))
    put("aap2/keepalive.hex", struct.pack(">I", len(keepalive)) + keepalive)
    put("crc/known_answers.txt".replace(".txt", ".hex"),
        struct.pack(">HI", crc16_x25(b"123456789"), crc32c(b"123456789")))


if __name__ == "__main__":
    main()
