import ftplib
import io
import socket
import threading
import time
from dataclasses import replace
from pathlib import Path

import pytest

from aviary.ftp import FtpServer
from aviary.store import Store


@pytest.fixture
def ftp_ctx(cfg, tmp_path):
    """Running FTP server on an ephemeral port plus capture of enqueues."""
    cfg = replace(cfg, ftp_enabled=True, ftp_port=0)
    Path(cfg.ingest_dir).mkdir(parents=True, exist_ok=True)
    store = Store(cfg.store_dir, cfg)
    uploads = []
    shutdown = threading.Event()
    server = FtpServer(cfg, lambda dest, cam: uploads.append((dest, cam)), shutdown)
    server.quarantine_cb = store.quarantine_file
    server.start()
    yield server, uploads, cfg, store
    shutdown.set()
    server.join(timeout=3)
    store.close()


def connect(server, cfg):
    client = ftplib.FTP()
    client.connect("127.0.0.1", server.port, timeout=5)
    return client


def test_scripted_client_full_session(ftp_ctx):
    server, uploads, cfg, store = ftp_ctx
    payload = bytes(range(256)) * 28672  # 7 MB, binary content
    client = connect(server, cfg)
    assert client.login(cfg.ftp_user, cfg.ftp_password).startswith("230")
    assert client.sendcmd("SYST").startswith("215")
    assert client.sendcmd("TYPE I").startswith("200")
    assert client.pwd() == "/"
    res = client.storbinary("STOR clip.mp4", io.BytesIO(payload))
    assert res.startswith("226")
    client.quit()

    dest = Path(cfg.ingest_dir) / cfg.ftp_user / "clip.mp4"
    assert dest.read_bytes() == payload
    assert uploads == [(dest, cfg.ftp_user)]
    # no temp files left behind
    assert list(Path(cfg.ingest_dir).glob(".partial-*")) == []


def test_wrong_password_rejected_and_stor_refused(ftp_ctx):
    server, uploads, cfg, store = ftp_ctx
    client = connect(server, cfg)
    with pytest.raises(ftplib.error_perm, match="530"):
        client.login(cfg.ftp_user, "wrong")
    # still not authenticated: STOR refused
    with pytest.raises(ftplib.error_perm, match="530"):
        client.sendcmd("STOR x.bin")
    client.close()


def test_stor_before_pasv_rejected(ftp_ctx):
    server, uploads, cfg, store = ftp_ctx
    client = connect(server, cfg)
    client.login(cfg.ftp_user, cfg.ftp_password)
    with pytest.raises(ftplib.error_temp, match="425"):
        client.sendcmd("STOR clip.mp4")
    client.quit()


def test_type_ascii_rejected(ftp_ctx):
    server, uploads, cfg, store = ftp_ctx
    client = connect(server, cfg)
    client.login(cfg.ftp_user, cfg.ftp_password)
    with pytest.raises(ftplib.error_perm, match="504"):
        client.sendcmd("TYPE A")
    client.quit()


def test_unknown_command_gets_502(ftp_ctx):
    server, uploads, cfg, store = ftp_ctx
    client = connect(server, cfg)
    client.login(cfg.ftp_user, cfg.ftp_password)
    with pytest.raises(ftplib.error_perm, match="502"):
        client.sendcmd("MKD newdir")
    client.quit()


def test_cwd_is_virtual(ftp_ctx):
    server, uploads, cfg, store = ftp_ctx
    client = connect(server, cfg)
    client.login(cfg.ftp_user, cfg.ftp_password)
    assert client.cwd("/recordings").startswith("250")
    assert client.pwd() == "/recordings"
    client.quit()


def test_epsv_transfer(ftp_ctx):
    server, uploads, cfg, store = ftp_ctx
    client = connect(server, cfg)
    client.login(cfg.ftp_user, cfg.ftp_password)
    client.set_pasv(True)
    client.af = socket.AF_INET
    # force EPSV path
    resp = client.sendcmd("EPSV")
    assert resp.startswith("229")
    port = int(resp.split("|||")[1].rstrip("|)").rstrip("|"))
    data = socket.create_connection(("127.0.0.1", port), timeout=5)
    client.putcmd("STOR via_epsv.bin")
    assert client.getresp().startswith("150")
    data.sendall(b"epsv payload")
    data.close()
    assert client.getresp().startswith("226")
    client.quit()
    dest = Path(cfg.ingest_dir) / cfg.ftp_user / "via_epsv.bin"
    assert dest.read_bytes() == b"epsv payload"


def test_replies_conform_to_three_digit_grammar(ftp_ctx):
    server, uploads, cfg, store = ftp_ctx
    raw = socket.create_connection(("127.0.0.1", server.port), timeout=5)
    f = raw.makefile("rb")

    def send(cmd):
        raw.sendall(cmd.encode() + b"\r\n")
        return f.readline().decode()

    greeting = f.readline().decode()
    assert greeting[:3] == "220" and greeting[3] == " "
    for cmd, _ in [("USER " + cfg.ftp_user, "331"), ("PASS " + cfg.ftp_password, "230"),
                   ("SYST", "215"), ("TYPE I", "200"), ("PWD", "257"),
                   ("NOOPX", "502"), ("QUIT", "221")]:
        reply = send(cmd)
        assert reply[:3].isdigit() and reply[3] == " ", f"{cmd!r} -> {reply!r}"
    raw.close()


def test_truncated_transfer_is_quarantined(ftp_ctx):
    server, uploads, cfg, store = ftp_ctx
    raw = socket.create_connection(("127.0.0.1", server.port), timeout=5)
    f = raw.makefile("rb")
    f.readline()  # greeting

    def cmd(c):
        raw.sendall(c.encode() + b"\r\n")
        return f.readline().decode()

    assert cmd(f"USER {cfg.ftp_user}").startswith("331")
    assert cmd(f"PASS {cfg.ftp_password}").startswith("230")
    assert cmd("TYPE I").startswith("200")
    pasv = cmd("PASV")
    assert pasv.startswith("227")
    nums = pasv[pasv.index("(") + 1: pasv.index(")")].split(",")
    port = (int(nums[4]) << 8) + int(nums[5])
    data = socket.create_connection(("127.0.0.1", port), timeout=5)
    raw.sendall(b"STOR truncated.mp4\r\n")
    assert f.readline().decode().startswith("150")
    data.sendall(b"only half of the fil")
    # drop the CONTROL connection mid-transfer: upload cannot be trusted.
    # The makefile wrapper must close first or the fd stays open.
    raw.setsockopt(socket.SOL_SOCKET, socket.SO_LINGER,
                   __import__("struct").pack("ii", 1, 0))
    f.close()
    raw.close()
    data.close()

    deadline = time.monotonic() + 5
    while time.monotonic() < deadline:
        reasons = list(store.quarantine_dir.glob("*.reason"))
        if reasons:
            break
        time.sleep(0.05)
    reasons = list(store.quarantine_dir.glob("*.reason"))
    assert reasons, "partial upload was not quarantined"
    assert "partial" in reasons[0].read_text()
    assert uploads == []  # no job enqueued
    dest = Path(cfg.ingest_dir) / cfg.ftp_user / "truncated.mp4"
    assert not dest.exists()
