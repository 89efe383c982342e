import { ApiClient, ApiError } from "./api.js";
import type { ReviewCard } from "./types.js";

export const PAGE_SIZE = 20;

export interface QueueEvents {
  onChange?: () => void;
  onNotice?: (message: string) => void;
}

/**
 * State machine behind the review queue: pages pending items oldest-first
 * through the API cursor, tracks the keyboard selection, and submits
 * decisions. Cards come straight from the API; ordering and candidate lists
 * are never re-sorted client-side.
 */
export class ReviewQueueController {
  cards: ReviewCard[] = [];
  nextCursor: string | null = null;
  exhausted = false;
  loading = false;
  /** count of sightings created by this session's labels (the badge) */
  labeledCount = 0;

  constructor(
    private readonly api: ApiClient,
    private readonly events: QueueEvents = {},
    private readonly pageSize: number = PAGE_SIZE,
  ) {}

  private changed(): void {
    this.events.onChange?.();
  }

  private notice(message: string): void {
    this.events.onNotice?.(message);
  }

  /** Load the next page; safe to call repeatedly (no-ops while loading). */
  async loadMore(): Promise<void> {
    if (this.loading || this.exhausted) return;
    this.loading = true;
    this.changed();
    try {
      const page = await this.api.pendingReviews(this.pageSize, this.nextCursor);
      const known = new Set(this.cards.map((c) => c.item.id));
      for (const item of page.items) {
        if (known.has(item.id)) continue;
        this.cards.push({
          item,
          cropUrl: this.api.cropUrl(item.crop_ref),
          selectedCandidate: null,
          pendingSubmit: false,
          submitFailed: false,
        });
      }
      this.nextCursor = page.next_cursor;
      this.exhausted = page.next_cursor === null;
    } catch (e) {
      this.notice(`failed to load queue: ${(e as Error).message}`);
    } finally {
      this.loading = false;
      this.changed();
    }
  }

  card(itemId: string): ReviewCard | undefined {
    return this.cards.find((c) => c.item.id === itemId);
  }

  /** The card keyboard input applies to: the oldest pending one. */
  front(): ReviewCard | undefined {
    return this.cards[0];
  }

  selectCandidate(itemId: string, candidate: number): void {
    const card = this.card(itemId);
    if (!card) return;
    if (candidate < 0 || candidate >= card.item.topk.length) return;
    card.selectedCandidate = candidate;
    this.changed();
  }

  private removeCard(itemId: string): void {
    this.cards = this.cards.filter((c) => c.item.id !== itemId);
    this.changed();
  }

  /** Label with the currently selected candidate (keyboard enter). */
  async confirmSelected(itemId: string): Promise<void> {
    const card = this.card(itemId);
    if (!card || card.selectedCandidate === null) return;
    const entry = card.item.topk[card.selectedCandidate];
    await this.label(itemId, entry.species_index);
  }

  /** Label with any species index (topk candidate or manual search pick). */
  async label(itemId: string, speciesIndex: number): Promise<void> {
    await this.submit(itemId, { kind: "label", speciesIndex });
  }

  async reject(itemId: string): Promise<void> {
    await this.submit(itemId, { kind: "reject" });
  }

  private async submit(
    itemId: string,
    action: { kind: "label"; speciesIndex: number } | { kind: "reject" },
  ): Promise<void> {
    const card = this.card(itemId);
    if (!card || card.pendingSubmit) return;
    card.pendingSubmit = true;
    this.changed();
    try {
      await this.api.submitReview(itemId, action);
      if (action.kind === "label") this.labeledCount += 1;
      this.removeCard(itemId);
    } catch (e) {
      if (e instanceof ApiError && e.status === 409) {
        // decided in another tab: the server answer wins, drop the card
        this.notice("item was already decided elsewhere");
        this.removeCard(itemId);
      } else if (e instanceof ApiError) {
        card.pendingSubmit = false;
        this.notice(`submit rejected: ${e.message}`);
        this.changed();
      } else {
        // network failure: card re-enters the queue with a pending-submit badge
        card.pendingSubmit = false;
        card.submitFailed = true;
        this.notice("network failure, submit not recorded; try again");
        this.changed();
      }
    }
  }
}
