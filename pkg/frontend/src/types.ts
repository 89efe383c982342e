/** Payload shapes of the daemon's HTTP API (field names match the server). */

export interface TopkEntry {
  species_index: number;
  label: string;
  prob: number;
}

export interface ReviewItemPayload {
  id: string;
  crop_ref: string;
  clip_id: string;
  frame_index: number;
  bbox: number[];
  topk: TopkEntry[];
  status: "pending" | "labeled" | "rejected";
  assigned_label: number | null;
  reviewed_at: string | null;
}

export interface SightingPayload {
  id: string;
  clip_id: string;
  frame_index: number;
  bbox: number[];
  species_index: number;
  species_label: string;
  confidence: number;
  decided_by: "auto" | "human";
  created_at: string;
  crop_ref: string;
  review_id: string | null;
}

export interface Page<T> {
  items: T[];
  next_cursor: string | null;
}

export interface DailySpeciesCount {
  species_label: string;
  count: number;
}

export interface DailySummaryDay {
  date: string;
  species: DailySpeciesCount[];
}

export interface HealthPayload {
  status: string;
  backend_health: string;
  queue_depth: number;
  species_labels: string[];
}

/**
 * Client-side view model for one pending crop. The candidate list mirrors
 * the API topk ordering exactly; the UI never re-sorts it.
 */
export interface ReviewCard {
  item: ReviewItemPayload;
  cropUrl: string;
  /** index into item.topk chosen by keyboard/click, if any */
  selectedCandidate: number | null;
  /** a submit is in flight */
  pendingSubmit: boolean;
  /** a submit failed on the network; the card stays queued with a badge */
  submitFailed: boolean;
}
