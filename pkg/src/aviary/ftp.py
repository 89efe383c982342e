"""Minimal FTP server for camera push: passive mode, binary STOR only.

Command subset: USER, PASS, SYST, TYPE, PWD, CWD, PASV, EPSV, STOR, QUIT.
Consumer feeder cameras universally speak PASV STOR over TYPE I, so active
mode and the rest of RFC 959 stay out.  Every command receives exactly one
final three-digit reply (STOR additionally gets the 150 preliminary).

Uploads land as ``.partial-<nonce>`` temp files and are atomically renamed
into ``<ingest_dir>/<camera_id>/<name>`` only on completion; the rename is
what defines "upload complete" for the rest of the system.  A control
connection that dies mid-transfer quarantines the partial file.
"""

from __future__ import annotations

import logging
import os
import secrets
import select
import socket
import threading
from pathlib import Path

from .ingest import TEMP_PREFIX

log = logging.getLogger("aviary.ftp")

GREETING = "220 aviary ingest service ready"
RECV_SIZE = 1 << 16


class FtpServer(threading.Thread):
    """Accept loop; one handler thread per control connection."""

    def __init__(self, cfg, store_cb, shutdown: threading.Event):
        super().__init__(name="aviary-ftp", daemon=True)
        self.cfg = cfg
        self.store_cb = store_cb  # (dest_path, camera_id) -> None, called post-rename
        self.shutdown = shutdown
        self.ingest_dir = Path(cfg.ingest_dir)
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.sock.bind(("0.0.0.0", cfg.ftp_port))
        self.sock.listen(8)
        self.sock.settimeout(0.25)
        self.port = self.sock.getsockname()[1]
        self.quarantine_cb = None  # (temp_path, reason) -> None

    def run(self) -> None:
        while not self.shutdown.is_set():
            try:
                conn, addr = self.sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            session = _Session(self, conn, addr)
            threading.Thread(target=session.serve, daemon=True,
                             name=f"aviary-ftp-{addr[0]}:{addr[1]}").start()
        try:
            self.sock.close()
        except OSError:
            pass


class _Session:
    def __init__(self, server: FtpServer, conn: socket.socket, addr):
        self.server = server
        self.cfg = server.cfg
        self.conn = conn
        self.addr = addr
        self.username: str | None = None
        self.authenticated = False
        self.transfer_type = "I"
        self.pasv_listener: socket.socket | None = None
        self.cwd = "/"

    # -- control channel --

    def reply(self, text: str) -> None:
        self.conn.sendall((text + "\r\n").encode("latin-1"))

    def _read_line(self) -> str | None:
        buf = b""
        self.conn.settimeout(0.25)
        while not self.server.shutdown.is_set():
            try:
                c = self.conn.recv(1)
            except socket.timeout:
                continue
            except OSError:
                return None
            if not c:
                return None
            buf += c
            if buf.endswith(b"\r\n"):
                return buf[:-2].decode("latin-1", errors="replace")
            if len(buf) > 4096:
                return None
        return None

    def serve(self) -> None:
        try:
            self.reply(GREETING)
            while True:
                line = self._read_line()
                if line is None:
                    break
                verb, _, arg = line.partition(" ")
                verb = verb.upper()
                handler = getattr(self, f"_cmd_{verb.lower()}", None)
                if handler is None:
                    self.reply(f"502 Command not implemented: {verb}")
                    continue
                if verb not in ("USER", "PASS", "QUIT", "SYST") and not self.authenticated:
                    self.reply("530 Please login with USER and PASS")
                    continue
                if handler(arg.strip()):
                    break
        except OSError:
            pass
        finally:
            self._close_pasv()
            try:
                self.conn.close()
            except OSError:
                pass

    def _close_pasv(self) -> None:
        if self.pasv_listener is not None:
            try:
                self.pasv_listener.close()
            except OSError:
                pass
            self.pasv_listener = None

    # -- commands --

    def _cmd_user(self, arg: str) -> bool:
        self.username = arg
        self.authenticated = False
        self.reply("331 Password required")
        return False

    def _cmd_pass(self, arg: str) -> bool:
        if self.username == self.cfg.ftp_user and arg == self.cfg.ftp_password:
            self.authenticated = True
            self.reply("230 Login successful")
        else:
            self.reply("530 Login incorrect")
        return False

    def _cmd_syst(self, arg: str) -> bool:
        self.reply("215 UNIX Type: L8")
        return False

    def _cmd_type(self, arg: str) -> bool:
        if arg.upper() == "I":
            self.transfer_type = "I"
            self.reply("200 Type set to I")
        else:
            self.reply("504 Only binary (TYPE I) transfers accepted")
        return False

    def _cmd_pwd(self, arg: str) -> bool:
        self.reply(f'257 "{self.cwd}" is the current directory')
        return False

    def _cmd_cwd(self, arg: str) -> bool:
        # The camera's idea of directories is virtual: uploads always land in
        # the per-camera subdirectory, so CWD just tracks the path string.
        if not arg:
            self.reply("501 Missing directory argument")
            return False
        self.cwd = arg if arg.startswith("/") else f"{self.cwd.rstrip('/')}/{arg}"
        self.reply(f'250 Directory changed to "{self.cwd}"')
        return False

    def _open_pasv(self) -> int:
        self._close_pasv()
        ls = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        ls.bind((self.conn.getsockname()[0], 0))
        ls.listen(1)
        ls.settimeout(10.0)
        self.pasv_listener = ls
        return ls.getsockname()[1]

    def _cmd_pasv(self, arg: str) -> bool:
        port = self._open_pasv()
        host = self.conn.getsockname()[0].replace(".", ",")
        self.reply(f"227 Entering Passive Mode ({host},{port >> 8},{port & 0xFF})")
        return False

    def _cmd_epsv(self, arg: str) -> bool:
        port = self._open_pasv()
        self.reply(f"229 Entering Extended Passive Mode (|||{port}|)")
        return False

    def _cmd_quit(self, arg: str) -> bool:
        self.reply("221 Goodbye")
        return True

    def _cmd_stor(self, arg: str) -> bool:
        if not arg:
            self.reply("501 Missing filename")
            return False
        if self.pasv_listener is None:
            self.reply("425 Use PASV first")
            return False
        try:
            data_conn, _ = self.pasv_listener.accept()
        except (socket.timeout, OSError):
            self._close_pasv()
            self.reply("425 Data connection failed")
            return False
        self._close_pasv()

        name = os.path.basename(arg.replace("\\", "/"))
        camera_id = self.username or "default"
        temp = self.server.ingest_dir / f"{TEMP_PREFIX}{secrets.token_hex(8)}"
        self.server.ingest_dir.mkdir(parents=True, exist_ok=True)
        self.reply("150 Opening BINARY mode data connection")
        aborted = False
        try:
            with open(temp, "wb") as f:
                data_conn.setblocking(False)
                self.conn.setblocking(False)
                while True:
                    readable, _, _ = select.select([data_conn, self.conn], [], [], 0.5)
                    if self.server.shutdown.is_set():
                        aborted = True
                        break
                    if self.conn in readable:
                        # Control traffic mid-transfer means ABOR-ish intent or
                        # a dead client; either way the upload is not trusted.
                        try:
                            peek = self.conn.recv(RECV_SIZE)
                        except OSError:
                            peek = b""
                        if not peek:
                            aborted = True
                            break
                    if data_conn in readable:
                        try:
                            chunk = data_conn.recv(RECV_SIZE)
                        except OSError:
                            aborted = True
                            break
                        if not chunk:
                            break  # EOF on data = transfer complete
                        f.write(chunk)
        except OSError as e:
            if getattr(e, "errno", None) == 28:  # ENOSPC
                try:
                    temp.unlink()
                except OSError:
                    pass
                try:
                    data_conn.close()
                except OSError:
                    pass
                self.conn.setblocking(True)
                self.reply("452 Insufficient storage space")
                return False
            aborted = True
        finally:
            try:
                data_conn.close()
            except OSError:
                pass

        if aborted:
            log.warning("aborted STOR of %s from %s; quarantining partial", name, self.addr)
            if self.server.quarantine_cb is not None:
                self.server.quarantine_cb(temp, f"partial FTP transfer of {name!r}")
            else:
                try:
                    temp.unlink()
                except OSError:
                    pass
            try:
                self.conn.setblocking(True)
                self.reply("426 Connection closed; transfer aborted")
            except OSError:
                pass
            return True

        dest_dir = self.server.ingest_dir / camera_id
        dest_dir.mkdir(parents=True, exist_ok=True)
        dest = dest_dir / name
        os.replace(temp, dest)
        self.conn.setblocking(True)
        self.reply("226 Transfer complete")
        try:
            self.server.store_cb(dest, camera_id)
        except Exception:
            log.exception("enqueue after STOR failed for %s", dest)
        return False
