/**
 * Keyboard-first review: 1-3 select a topk candidate, `r` rejects,
 * Enter confirms the selected candidate. Returned actions are applied to
 * the front (oldest) card.
 */

export type KeyAction =
  | { kind: "select"; candidate: number }
  | { kind: "reject" }
  | { kind: "confirm" }
  | { kind: "none" };

export function actionForKey(key: string): KeyAction {
  if (key === "1" || key === "2" || key === "3") {
    return { kind: "select", candidate: Number(key) - 1 };
  }
  if (key === "r" || key === "R") {
    return { kind: "reject" };
  }
  if (key === "Enter") {
    return { kind: "confirm" };
  }
  return { kind: "none" };
}
