import type { DailySummaryDay, ReviewCard } from "./types.js";

/**
 * Pure HTML builders: every rendered label, percent, and count comes
 * straight from an API field, which keeps these trivially snapshot-testable
 * against recorded payloads.
 */

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function formatPercent(prob: number): string {
  return `${(prob * 100).toFixed(1)}%`;
}

export function renderCard(card: ReviewCard, isFront: boolean): string {
  const item = card.item;
  const candidates = item.topk
    .map((entry, i) => {
      const selected = card.selectedCandidate === i ? " selected" : "";
      return (
        `<li class="candidate${selected}" data-item="${escapeHtml(item.id)}" data-candidate="${i}">` +
        `<span class="key">${i + 1}</span> ` +
        `<span class="label">${escapeHtml(entry.label)}</span> ` +
        `<span class="prob">${formatPercent(entry.prob)}</span></li>`
      );
    })
    .join("");
  const badges = [
    card.pendingSubmit ? '<span class="badge submitting">submitting</span>' : "",
    card.submitFailed ? '<span class="badge pending-submit">pending submit</span>' : "",
    isFront ? '<span class="badge front">keys active</span>' : "",
  ].join("");
  return (
    `<article class="card${isFront ? " front" : ""}" data-item="${escapeHtml(item.id)}">` +
    `<img src="${escapeHtml(card.cropUrl)}" alt="crop ${escapeHtml(item.crop_ref)}">` +
    `<div class="meta">clip ${escapeHtml(item.clip_id)} · frame ${item.frame_index}${badges}</div>` +
    `<ol class="candidates">${candidates}</ol>` +
    `<div class="actions">` +
    `<button data-action="confirm" data-item="${escapeHtml(item.id)}">label (enter)</button>` +
    `<button data-action="reject" data-item="${escapeHtml(item.id)}">reject (r)</button>` +
    `<input data-action="search" data-item="${escapeHtml(item.id)}" list="species-list" ` +
    `placeholder="other species...">` +
    `</div></article>`
  );
}

export function renderQueue(cards: ReviewCard[], loading: boolean): string {
  if (!cards.length && !loading) {
    return '<p class="empty">Review queue is empty. Nothing needs a human right now.</p>';
  }
  const rendered = cards.map((c, i) => renderCard(c, i === 0)).join("");
  return rendered + (loading ? '<p class="loading">loading…</p>' : "");
}

export function renderSpeciesOptions(labels: string[]): string {
  return labels
    .map((label, i) => `<option value="${escapeHtml(label)}" data-index="${i}"></option>`)
    .join("");
}

export function renderDashboard(days: DailySummaryDay[]): string {
  if (!days.length) {
    return '<p class="empty">No sightings in this range.</p>';
  }
  const rows = days
    .flatMap((day) =>
      day.species.map(
        (s) =>
          `<tr><td>${escapeHtml(day.date)}</td>` +
          `<td>${escapeHtml(s.species_label)}</td>` +
          `<td class="count">${s.count}</td></tr>`,
      ),
    )
    .join("");
  return (
    '<table class="daily"><thead><tr><th>date</th><th>species</th><th>count</th></tr></thead>' +
    `<tbody>${rows}</tbody></table>`
  );
}
