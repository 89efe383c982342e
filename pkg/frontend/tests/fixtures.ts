import type { ReviewItemPayload } from "../src/types.js";

/** Recorded pending-review payload shape from a live daemon run. */
export function reviewItem(n: number): ReviewItemPayload {
  return {
    id: `rv-item${n.toString().padStart(4, "0")}`,
    crop_ref: `cr-crop${n.toString(16).padStart(4, "0")}`,
    clip_id: "abc123def456-20260811T090000000000",
    frame_index: n,
    bbox: [10, 10, 110, 90],
    topk: [
      { species_index: 1, label: "blue_tit", prob: 0.6 },
      { species_index: 2, label: "great_tit", prob: 0.25 },
      { species_index: 0, label: "european_robin", prob: 0.05 },
    ],
    status: "pending",
    assigned_label: null,
    reviewed_at: null,
  };
}

export function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

export interface RecordedCall {
  url: string;
  init?: RequestInit;
}

/** Scripted fetch: pops canned responses in order, records calls. */
export function scriptedFetch(script: Array<Response | Error>) {
  const calls: RecordedCall[] = [];
  const fetchFn = async (url: string, init?: RequestInit): Promise<Response> => {
    calls.push({ url, init });
    const next = script.shift();
    if (!next) throw new Error(`unscripted fetch: ${url}`);
    if (next instanceof Error) throw next;
    return next;
  };
  return { fetchFn, calls };
}
