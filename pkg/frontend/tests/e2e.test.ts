/**
 * Review loop E2E against a live daemon.
 *
 * Touches only external interfaces: the AVRY1 container and mock-fixture
 * schema on disk, the `aviary` CLI, and the HTTP API the UI consumes. The
 * queue controller under test is the exact code the browser runs.
 */

import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { createHash } from "node:crypto";
import { mkdtempSync, readFileSync, writeFileSync, mkdirSync } from "node:fs";
import { tmpdir } from "node:os";
import { join, resolve } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { ReviewQueueController } from "../src/queue.js";

const DAEMON_SRC = resolve(__dirname, "..", "..", "src");
const PYTHON = "python3";
const PORT = 18300 + (process.pid % 1000);
const BASE = `http://127.0.0.1:${PORT}`;

function writeAvry1(path: string, frames: Buffer[], w: number, h: number): void {
  const header = Buffer.alloc(5 + 16);
  header.write("AVRY1", 0, "ascii");
  header.writeUInt32LE(w, 5);
  header.writeUInt32LE(h, 9);
  header.writeUInt32LE(frames.length, 13);
  header.writeUInt32LE(1000, 17);
  const records = frames.map((pixels, i) => {
    const ts = Buffer.alloc(8);
    ts.writeBigUInt64LE(BigInt(i * 1000));
    return Buffer.concat([ts, pixels]);
  });
  writeFileSync(path, Buffer.concat([header, ...records]));
}

function noiseFrame(w: number, h: number, seed: number): Buffer {
  // LCG: deterministic pseudo-noise, plenty sharp for the blur gate
  const buf = Buffer.alloc(w * h * 3);
  let state = seed >>> 0;
  for (let i = 0; i < buf.length; i++) {
    state = (state * 1664525 + 1013904223) >>> 0;
    buf[i] = state >>> 24;
  }
  return buf;
}

function runCli(args: string[], env: NodeJS.ProcessEnv): void {
  const proc = spawnSync(PYTHON, ["-m", "aviary.cli", ...args], {
    env,
    encoding: "utf-8",
    timeout: 60_000,
  });
  if (proc.status !== 0) {
    throw new Error(`aviary ${args.join(" ")} failed: ${proc.stderr}`);
  }
}

describe("review loop E2E", () => {
  let daemon: ChildProcess | undefined;
  let workdir: string;
  let env: NodeJS.ProcessEnv;
  let configPath: string;

  beforeAll(async () => {
    workdir = mkdtempSync(join(tmpdir(), "aviary-ui-e2e-"));
    env = { ...process.env, PYTHONPATH: DAEMON_SRC, AVIARY_LOG: "WARNING" };

    // a clip whose classification confidence (0.6) lands in the review queue
    const w = 96;
    const h = 72;
    const frames = [0, 1, 2].map((i) => noiseFrame(w, h, 41 + i));
    const clipPath = join(workdir, "clip.avry");
    writeAvry1(clipPath, frames, w, h);
    const hashPrefix = createHash("sha256")
      .update(readFileSync(clipPath))
      .digest("hex")
      .slice(0, 12);

    const fixtures = join(workdir, "fixtures");
    mkdirSync(fixtures);
    writeFileSync(
      join(fixtures, `${hashPrefix}.json`),
      JSON.stringify({
        frames: {
          "0": {
            detections: [{ bbox: [5, 5, 80, 60], score: 0.95, class_id: 14 }],
            label: "blue_tit",
            label_conf: 0.6,
          },
          "1": {
            detections: [{ bbox: [10, 8, 90, 66], score: 0.9, class_id: 14 }],
            label: "great_tit",
            label_conf: 0.55,
          },
        },
      }),
    );

    configPath = join(workdir, "aviary.conf");
    writeFileSync(
      configPath,
      [
        `ingest_dir = ${join(workdir, "ingest")}`,
        `store_dir = ${join(workdir, "store")}`,
        "ftp_enabled = false",
        `http_port = ${PORT}`,
        "backend_mode = mock",
        `sidecar_endpoint = ${fixtures}`,
        "blur_threshold = 0",
      ].join("\n") + "\n",
    );

    // seed the store through the CLI, then bring the daemon up
    runCli(["--config", configPath, "process", clipPath, "--commit"], env);
    daemon = spawn(PYTHON, ["-m", "aviary.cli", "--config", configPath, "serve"], {
      env,
      stdio: ["ignore", "ignore", "pipe"],
    });
    const deadline = Date.now() + 30_000;
    let lastError = "";
    while (Date.now() < deadline) {
      try {
        const resp = await fetch(`${BASE}/api/health`);
        if (resp.ok) return;
      } catch (e) {
        lastError = String(e);
      }
      await new Promise((r) => setTimeout(r, 100));
    }
    throw new Error(`daemon never came up: ${lastError}`);
  }, 60_000);

  afterAll(async () => {
    if (daemon) {
      daemon.kill("SIGTERM");
      await new Promise((r) => {
        daemon!.once("exit", r);
        setTimeout(r, 10_000);
      });
    }
  });

  it("labels a pending item: one human sighting, card gone, export matches, 409 on repeat", async () => {
    const api = new ApiClient(BASE);
    const health = await api.health();
    expect(health.species_labels.length).toBe(40);

    const controller = new ReviewQueueController(api, {});
    await controller.loadMore();
    expect(controller.cards.length).toBe(2);
    const card = controller.front()!;
    const chosen = card.item.topk[0];

    // keyboard flow: press "1" then enter
    controller.selectCandidate(card.item.id, 0);
    await controller.confirmSelected(card.item.id);
    expect(controller.cards.length).toBe(1);
    expect(controller.cards.find((c) => c.item.id === card.item.id)).toBeUndefined();
    expect(controller.labeledCount).toBe(1);

    // exactly one human sighting with the chosen species
    const sightings = await api.sightings({ limit: "100" });
    const human = sightings.items.filter((s) => s.decided_by === "human");
    expect(human).toHaveLength(1);
    expect(human[0].species_index).toBe(chosen.species_index);
    expect(human[0].species_label).toBe(chosen.label);

    // a concurrent second submit surfaces the 409 path
    const dup = await fetch(`${BASE}/api/review/${card.item.id}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ action: "reject" }),
    });
    expect(dup.status).toBe(409);

    // the crop image the card points at is real
    const crop = await fetch(controller.cards[0].cropUrl);
    expect(crop.status).toBe(200);
    expect(crop.headers.get("content-type")).toBe("image/png");

    // export emits exactly one manifest line matching the chosen label
    const exportDir = join(workdir, "export");
    runCli(["--config", configPath, "export-reviews", exportDir], env);
    const manifest = readFileSync(join(exportDir, "manifest.jsonl"), "utf-8")
      .trim()
      .split("\n")
      .filter(Boolean)
      .map((line) => JSON.parse(line));
    expect(manifest).toHaveLength(1);
    expect(manifest[0].species_index).toBe(chosen.species_index);
    expect(manifest[0].label).toBe(chosen.label);
  }, 60_000);

  it("serves the built UI shell at /ui/ when present", async () => {
    const resp = await fetch(`${BASE}/ui/`);
    // the daemon was started without AVIARY_UI_DIR pointing at dist, so
    // either outcome must be well-formed: 200 with html or a clean 404
    expect([200, 404]).toContain(resp.status);
  });
});
