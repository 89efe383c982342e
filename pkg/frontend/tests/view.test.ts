import { describe, expect, it } from "vitest";

import type { ReviewCard } from "../src/types.js";
import {
  escapeHtml,
  formatPercent,
  renderCard,
  renderDashboard,
  renderQueue,
  renderSpeciesOptions,
} from "../src/view.js";
import { reviewItem } from "./fixtures.js";

function card(overrides: Partial<ReviewCard> = {}): ReviewCard {
  return {
    item: reviewItem(0),
    cropUrl: "/api/crops/cr-crop0000",
    selectedCandidate: null,
    pendingSubmit: false,
    submitFailed: false,
    ...overrides,
  };
}

describe("card rendering", () => {
  it("renders every label and percent straight from the API fixture", () => {
    const html = renderCard(card(), true);
    // no invented data: these values exist verbatim in the payload
    expect(html).toContain("blue_tit");
    expect(html).toContain("great_tit");
    expect(html).toContain("european_robin");
    expect(html).toContain("60.0%");
    expect(html).toContain("25.0%");
    expect(html).toContain("5.0%");
    expect(html).toContain('src="/api/crops/cr-crop0000"');
    expect(html).toContain("frame 0");
    // candidate DOM order mirrors topk order
    const order = [...html.matchAll(/class="label">([a-z_]+)</g)].map((m) => m[1]);
    expect(order).toEqual(["blue_tit", "great_tit", "european_robin"]);
  });

  it("marks the selected candidate and badges", () => {
    const html = renderCard(card({ selectedCandidate: 1, submitFailed: true }), false);
    expect(html).toContain('candidate selected" data-item="rv-item0000" data-candidate="1"');
    expect(html).toContain("pending-submit");
    expect(html).not.toContain("keys active");
  });

  it("escapes hostile strings", () => {
    const hostile = card();
    hostile.item = { ...hostile.item, clip_id: '<script>alert(1)</script>' };
    const html = renderCard(hostile, false);
    expect(html).not.toContain("<script>alert");
    expect(html).toContain("&lt;script&gt;");
  });
});

describe("queue rendering", () => {
  it("empty queue shows the empty state", () => {
    expect(renderQueue([], false)).toContain("Review queue is empty");
  });

  it("only the front card gets the active-keys badge", () => {
    const html = renderQueue([card(), { ...card(), item: reviewItem(1) }], false);
    expect(html.match(/keys active/g)).toHaveLength(1);
  });
});

describe("dashboard rendering", () => {
  it("renders exactly the API counts, no aggregation of its own", () => {
    const days = [
      {
        date: "2026-08-10",
        species: [
          { species_label: "great_tit", count: 5 },
          { species_label: "blue_tit", count: 2 },
        ],
      },
      { date: "2026-08-11", species: [{ species_label: "great_tit", count: 1 }] },
    ];
    const html = renderDashboard(days);
    expect(html).toContain("<td>2026-08-10</td>");
    expect(html).toContain('<td class="count">5</td>');
    expect(html).toContain('<td class="count">2</td>');
    expect(html).toContain("<td>2026-08-11</td>");
    expect((html.match(/<tr>/g) ?? []).length).toBe(4); // header + 3 rows
  });

  it("empty range shows the empty state", () => {
    expect(renderDashboard([])).toContain("No sightings");
  });
});

describe("helpers", () => {
  it("formats percents to one decimal", () => {
    expect(formatPercent(0.6)).toBe("60.0%");
    expect(formatPercent(0.025)).toBe("2.5%");
  });

  it("escapes html metacharacters", () => {
    expect(escapeHtml('<a href="x">&</a>')).toBe(
      "&lt;a href=&quot;x&quot;&gt;&amp;&lt;/a&gt;",
    );
  });

  it("species options carry their config index", () => {
    const html = renderSpeciesOptions(["a", "b"]);
    expect(html).toContain('value="a" data-index="0"');
    expect(html).toContain('value="b" data-index="1"');
  });
});
