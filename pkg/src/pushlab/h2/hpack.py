"""Static-table HPACK (RFC 7541).

The encoder only emits indexed fields and literals without indexing, and
never Huffman-codes, so output is deterministic and needs no connection
state. The decoder additionally accepts Huffman strings, incremental
indexing (entries live for the one block being decoded) and table size
updates, which is enough to read blocks from ordinary encoders that start
from an empty dynamic table.
"""

from __future__ import annotations

from ._huffman_table import CODES

Header = tuple[bytes, bytes]
HeaderList = list[Header]

STATIC_TABLE: tuple[Header, ...] = tuple(
    (n.encode(), v.encode())
    for n, v in [
        (":authority", ""),
        (":method", "GET"),
        (":method", "POST"),
        (":path", "/"),
        (":path", "/index.html"),
        (":scheme", "http"),
        (":scheme", "https"),
        (":status", "200"),
        (":status", "204"),
        (":status", "206"),
        (":status", "304"),
        (":status", "400"),
        (":status", "404"),
        (":status", "500"),
        ("accept-charset", ""),
        ("accept-encoding", "gzip, deflate"),
        ("accept-language", ""),
        ("accept-ranges", ""),
        ("accept", ""),
        ("access-control-allow-origin", ""),
        ("age", ""),
        ("allow", ""),
        ("authorization", ""),
        ("cache-control", ""),
        ("content-disposition", ""),
        ("content-encoding", ""),
        ("content-language", ""),
        ("content-length", ""),
        ("content-location", ""),
        ("content-range", ""),
        ("content-type", ""),
        ("cookie", ""),
        ("date", ""),
        ("etag", ""),
        ("expect", ""),
        ("expires", ""),
        ("from", ""),
        ("host", ""),
        ("if-match", ""),
        ("if-modified-since", ""),
        ("if-none-match", ""),
        ("if-range", ""),
        ("if-unmodified-since", ""),
        ("last-modified", ""),
        ("link", ""),
        ("location", ""),
        ("max-forwards", ""),
        ("proxy-authenticate", ""),
        ("proxy-authorization", ""),
        ("range", ""),
        ("referer", ""),
        ("refresh", ""),
        ("retry-after", ""),
        ("server", ""),
        ("set-cookie", ""),
        ("strict-transport-security", ""),
        ("transfer-encoding", ""),
        ("user-agent", ""),
        ("vary", ""),
        ("via", ""),
        ("www-authenticate", ""),
    ]
)

# first index wins, as the table lists duplicates of a name in ascending order
_FULL_INDEX: dict[Header, int] = {}
_NAME_INDEX: dict[bytes, int] = {}
for _i, (_n, _v) in enumerate(STATIC_TABLE, start=1):
    _FULL_INDEX.setdefault((_n, _v), _i)
    _NAME_INDEX.setdefault(_n, _i)

PSEUDO_HEADERS = {b":method", b":path", b":authority", b":scheme", b":status"}


class DecodeError(ValueError):
    pass


class HeaderListError(ValueError):
    pass


def as_header_list(headers) -> HeaderList:
    """Normalise (name, value) pairs given as str or bytes to a HeaderList."""
    out = []
    for name, value in headers:
        if isinstance(name, str):
            name = name.encode()
        if isinstance(value, str):
            value = value.encode()
        out.append((bytes(name), bytes(value)))
    return out


def check_header_list(headers: HeaderList) -> None:
    seen_regular = False
    for name, _ in headers:
        if name != name.lower():
            raise HeaderListError(f"header name {name!r} contains uppercase bytes")
        if name.startswith(b":"):
            if seen_regular:
                raise HeaderListError(f"pseudo-header {name!r} after regular fields")
        else:
            seen_regular = True


def encode_integer(value: int, prefix_bits: int, first_byte: int = 0) -> bytes:
    limit = (1 << prefix_bits) - 1
    if value < limit:
        return bytes([first_byte | value])
    out = bytearray([first_byte | limit])
    value -= limit
    while value >= 128:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    out.append(value)
    return bytes(out)


def decode_integer(data: bytes, pos: int, prefix_bits: int) -> tuple[int, int]:
    if pos >= len(data):
        raise DecodeError("truncated integer")
    limit = (1 << prefix_bits) - 1
    value = data[pos] & limit
    pos += 1
    if value < limit:
        return value, pos
    shift = 0
    while True:
        if pos >= len(data):
            raise DecodeError("truncated integer continuation")
        b = data[pos]
        pos += 1
        value += (b & 0x7F) << shift
        shift += 7
        if not b & 0x80:
            return value, pos
        if shift > 62:
            raise DecodeError("integer overflow")


def _encode_string(s: bytes) -> bytes:
    return encode_integer(len(s), 7) + s


def hpack_encode(headers) -> bytes:
    headers = as_header_list(headers)
    check_header_list(headers)
    out = bytearray()
    for name, value in headers:
        idx = _FULL_INDEX.get((name, value))
        if idx is not None:
            out += encode_integer(idx, 7, 0x80)
            continue
        name_idx = _NAME_INDEX.get(name)
        if name_idx is not None:
            out += encode_integer(name_idx, 4, 0x00)
        else:
            out += b"\x00" + _encode_string(name)
        out += _encode_string(value)
    return bytes(out)


def _build_decode_tree():
    # nested dicts keyed by bit; leaves are symbols
    root: dict = {}
    for sym, (code, nbits) in enumerate(CODES):
        node = root
        for i in range(nbits - 1, 0, -1):
            node = node.setdefault((code >> i) & 1, {})
        node[code & 1] = sym
    return root


_HUFFMAN_TREE = _build_decode_tree()


def huffman_decode(data: bytes) -> bytes:
    out = bytearray()
    node = _HUFFMAN_TREE
    pad_bits = 0
    pad_ones = True
    for byte in data:
        for i in range(7, -1, -1):
            bit = (byte >> i) & 1
            nxt = node[bit]
            pad_bits += 1
            pad_ones = pad_ones and bit == 1
            if isinstance(nxt, int):
                if nxt == 256:
                    raise DecodeError("EOS symbol inside Huffman string")
                out.append(nxt)
                node = _HUFFMAN_TREE
                pad_bits = 0
                pad_ones = True
            else:
                node = nxt
    if pad_bits > 7 or not pad_ones:
        raise DecodeError("invalid Huffman padding")
    return bytes(out)


def _decode_string(data: bytes, pos: int) -> tuple[bytes, int]:
    if pos >= len(data):
        raise DecodeError("truncated string length")
    huffman = bool(data[pos] & 0x80)
    length, pos = decode_integer(data, pos, 7)
    end = pos + length
    if end > len(data):
        raise DecodeError("truncated string")
    raw = bytes(data[pos:end])
    return (huffman_decode(raw) if huffman else raw), end


def hpack_decode(data: bytes) -> HeaderList:
    dynamic: list[Header] = []  # newest first, scoped to this block

    def lookup(index: int) -> Header:
        if index == 0:
            raise DecodeError("index 0 is not valid")
        if index <= len(STATIC_TABLE):
            return STATIC_TABLE[index - 1]
        d = index - len(STATIC_TABLE) - 1
        if d >= len(dynamic):
            raise DecodeError(f"index {index} outside table")
        return dynamic[d]

    headers: HeaderList = []
    pos = 0
    while pos < len(data):
        b = data[pos]
        if b & 0x80:
            index, pos = decode_integer(data, pos, 7)
            headers.append(lookup(index))
            continue
        if b & 0xE0 == 0x20:
            # dynamic table size update; entries are not retained across blocks anyway
            _, pos = decode_integer(data, pos, 5)
            continue
        indexing = bool(b & 0x40)
        prefix = 6 if indexing else 4
        index, pos = decode_integer(data, pos, prefix)
        if index:
            name = lookup(index)[0]
        else:
            name, pos = _decode_string(data, pos)
        value, pos = _decode_string(data, pos)
        headers.append((name, value))
        if indexing:
            dynamic.insert(0, (name, value))
    return headers
