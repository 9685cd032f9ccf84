"""Minimal threaded WebSocket codec (RFC 6455) for the teleop bridge.

Text frames only, small messages, no extensions. Enough for one browser or
headless client per connection; not a general-purpose implementation.
"""

from __future__ import annotations

import base64
import hashlib
import os
import socket
import struct

_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


class WsClosed(ConnectionError):
    pass


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise WsClosed("socket closed")
        buf += chunk
    return buf


def accept_key(key: str) -> str:
    digest = hashlib.sha1((key + _GUID).encode()).digest()
    return base64.b64encode(digest).decode()


def handshake_server(conn: socket.socket) -> dict:
    """Read the HTTP upgrade request and complete the handshake."""
    data = b""
    while b"\r\n\r\n" not in data:
        chunk = conn.recv(4096)
        if not chunk:
            raise WsClosed("client closed during handshake")
        data += chunk
        if len(data) > 65536:
            raise ValueError("oversized handshake request")
    head = data.split(b"\r\n\r\n", 1)[0].decode("latin1")
    headers = {}
    for line in head.split("\r\n")[1:]:
        if ":" in line:
            k, v = line.split(":", 1)
            headers[k.strip().lower()] = v.strip()
    key = headers.get("sec-websocket-key")
    if not key or "websocket" not in headers.get("upgrade", "").lower():
        raise ValueError("not a websocket upgrade request")
    resp = ("HTTP/1.1 101 Switching Protocols\r\n"
            "Upgrade: websocket\r\n"
            "Connection: Upgrade\r\n"
            f"Sec-WebSocket-Accept: {accept_key(key)}\r\n\r\n")
    conn.sendall(resp.encode("latin1"))
    return headers


def handshake_client(sock: socket.socket, host: str, port: int, path: str = "/") -> None:
    key = base64.b64encode(os.urandom(16)).decode()
    req = (f"GET {path} HTTP/1.1\r\n"
           f"Host: {host}:{port}\r\n"
           "Upgrade: websocket\r\n"
           "Connection: Upgrade\r\n"
           f"Sec-WebSocket-Key: {key}\r\n"
           "Sec-WebSocket-Version: 13\r\n\r\n")
    sock.sendall(req.encode("latin1"))
    data = b""
    while b"\r\n\r\n" not in data:
        chunk = sock.recv(4096)
        if not chunk:
            raise WsClosed("server closed during handshake")
        data += chunk
    head = data.split(b"\r\n\r\n", 1)[0].decode("latin1")
    if "101" not in head.split("\r\n")[0]:
        raise ConnectionError(f"handshake rejected: {head.splitlines()[0]}")
    for line in head.split("\r\n")[1:]:
        if line.lower().startswith("sec-websocket-accept:"):
            got = line.split(":", 1)[1].strip()
            if got != accept_key(key):
                raise ConnectionError("bad accept key")


def send_text(sock: socket.socket, text: str, mask: bool) -> None:
    payload = text.encode("utf-8")
    header = bytearray([0x81])  # FIN + text opcode
    n = len(payload)
    mask_bit = 0x80 if mask else 0
    if n < 126:
        header.append(mask_bit | n)
    elif n < 65536:
        header.append(mask_bit | 126)
        header += struct.pack(">H", n)
    else:
        header.append(mask_bit | 127)
        header += struct.pack(">Q", n)
    if mask:
        key = os.urandom(4)
        header += key
        payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
    sock.sendall(bytes(header) + payload)


def _send_control(sock: socket.socket, opcode: int, payload: bytes, mask: bool) -> None:
    header = bytearray([0x80 | opcode])
    mask_bit = 0x80 if mask else 0
    header.append(mask_bit | len(payload))
    if mask:
        key = os.urandom(4)
        header += key
        payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
    sock.sendall(bytes(header) + payload)


def recv_text(sock: socket.socket, respond_mask: bool = False) -> str:
    """Next complete text message; answers pings, raises WsClosed on close."""
    fragments = []
    while True:
        b0, b1 = _recv_exact(sock, 2)
        opcode = b0 & 0x0F
        fin = b0 & 0x80
        masked = b1 & 0x80
        length = b1 & 0x7F
        if length == 126:
            length = struct.unpack(">H", _recv_exact(sock, 2))[0]
        elif length == 127:
            length = struct.unpack(">Q", _recv_exact(sock, 8))[0]
        key = _recv_exact(sock, 4) if masked else None
        payload = _recv_exact(sock, length) if length else b""
        if key:
            payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
        if opcode == 0x8:
            raise WsClosed("close frame received")
        if opcode == 0x9:  # ping
            _send_control(sock, 0xA, payload, respond_mask)
            continue
        if opcode == 0xA:  # pong
            continue
        if opcode in (0x1, 0x0):
            fragments.append(payload)
            if fin:
                return b"".join(fragments).decode("utf-8")
            continue
        raise ValueError(f"unsupported opcode {opcode}")


def send_close(sock: socket.socket, mask: bool) -> None:
    try:
        _send_control(sock, 0x8, b"", mask)
    except OSError:
        pass
