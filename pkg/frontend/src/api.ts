import type {
  DailySummaryDay,
  HealthPayload,
  Page,
  ReviewItemPayload,
  SightingPayload,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/** Error carrying the HTTP status so callers can branch on 409. */
export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

export interface SubmitResult {
  item: ReviewItemPayload;
  sighting?: SightingPayload;
}

/** Thin typed client over the daemon's JSON API. */
export class ApiClient {
  constructor(
    private readonly base: string = "",
    private readonly fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  cropUrl(cropRef: string): string {
    return `${this.base}/api/crops/${encodeURIComponent(cropRef)}`;
  }

  private async getJson<T>(path: string, params?: Record<string, string>): Promise<T> {
    const query = params && Object.keys(params).length
      ? "?" + new URLSearchParams(params).toString()
      : "";
    const resp = await this.fetchFn(`${this.base}${path}${query}`);
    if (!resp.ok) {
      throw new ApiError(resp.status, await errorMessage(resp));
    }
    return (await resp.json()) as T;
  }

  health(): Promise<HealthPayload> {
    return this.getJson("/api/health");
  }

  pendingReviews(limit: number, cursor?: string | null): Promise<Page<ReviewItemPayload>> {
    const params: Record<string, string> = { limit: String(limit) };
    if (cursor) params.cursor = cursor;
    return this.getJson("/api/review/pending", params);
  }

  sightings(params: Record<string, string> = {}): Promise<Page<SightingPayload>> {
    return this.getJson("/api/sightings", params);
  }

  dailySummary(from?: string, to?: string): Promise<{ days: DailySummaryDay[] }> {
    const params: Record<string, string> = {};
    if (from) params.from = from;
    if (to) params.to = to;
    return this.getJson("/api/summary/daily", params);
  }

  async submitReview(
    itemId: string,
    action: { kind: "label"; speciesIndex: number } | { kind: "reject" },
  ): Promise<SubmitResult> {
    const body =
      action.kind === "label"
        ? { action: "label", species_index: action.speciesIndex }
        : { action: "reject" };
    const resp = await this.fetchFn(
      `${this.base}/api/review/${encodeURIComponent(itemId)}`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(body),
      },
    );
    if (!resp.ok) {
      throw new ApiError(resp.status, await errorMessage(resp));
    }
    return (await resp.json()) as SubmitResult;
  }
}

async function errorMessage(resp: Response): Promise<string> {
  try {
    const body = (await resp.json()) as { error?: string };
    return body.error ?? `HTTP ${resp.status}`;
  } catch {
    return `HTTP ${resp.status}`;
  }
}
