"""Request handling and the serve loops (stdio child process or TCP).

One request in flight per connection; the daemon's connection pool provides
any parallelism.  A malformed request gets an ``error`` reply and the
connection stays up; bytes that desync the framing itself end the connection
(but never the process).
"""

from __future__ import annotations

import logging
import socket
import sys

from .protocol import ConnectionClosed, ProtocolError, decode_image, encode, read_message

log = logging.getLogger("sidecar")


class Server:
    def __init__(self, models):
        self.models = models

    def handle(self, msg: dict) -> dict:
        mtype = msg.get("type")
        if mtype == "hello":
            return {"type": "hello", "labels": self.models.labels}
        if mtype == "detect_req":
            try:
                rgb = decode_image(msg)
            except ProtocolError as e:
                return {"type": "error", "code": "bad_image", "message": str(e)}
            return {"type": "detect_resp", "detections": self.models.detect(rgb)}
        if mtype == "classify_req":
            try:
                rgb = decode_image(msg)
            except ProtocolError as e:
                return {"type": "error", "code": "bad_image", "message": str(e)}
            return {"type": "classify_resp", "probs": self.models.classify(rgb)}
        return {"type": "error", "code": "bad_request",
                "message": f"unknown message type {mtype!r}"}

    # -- serve loops --

    def serve_stream(self, read, write) -> None:
        """Answer frames until the peer closes or the framing desyncs."""
        while True:
            try:
                msg = read_message(read)
            except ConnectionClosed:
                return
            except ProtocolError as e:
                # The length prefix can no longer be trusted; reply and stop.
                log.warning("framing error, closing connection: %s", e)
                try:
                    write(encode({"type": "error", "code": "bad_frame",
                                  "message": str(e)}))
                except OSError:
                    pass
                return
            try:
                reply = self.handle(msg)
            except Exception as e:  # a model bug must not kill the process
                log.exception("handler failed")
                reply = {"type": "error", "code": "internal",
                         "message": f"{type(e).__name__}: {e}"}
            write(encode(reply))

    def serve_stdio(self) -> None:
        stdin = sys.stdin.buffer
        stdout = sys.stdout.buffer

        def write(data: bytes) -> None:
            stdout.write(data)
            stdout.flush()

        self.serve_stream(stdin.read1 if hasattr(stdin, "read1") else stdin.read, write)

    def serve_tcp(self, host: str, port: int) -> None:
        lis = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        lis.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        lis.bind((host, port))
        lis.listen(1)
        log.info("listening on %s:%d", host, lis.getsockname()[1])
        try:
            while True:
                conn, addr = lis.accept()
                log.info("connection from %s", addr)
                try:
                    self.serve_stream(conn.recv, conn.sendall)
                except OSError as e:
                    log.warning("connection error: %s", e)
                finally:
                    conn.close()
        finally:
            lis.close()
