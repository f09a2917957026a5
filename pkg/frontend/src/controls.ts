// Pure console logic, kept DOM-free so it is unit-testable. The rendering
// layer calls these helpers; it never re-derives scores or paths itself.

import type { ConfigDocument, RoutePath, Trace } from "./types.js";

export type BadgeKind = "rule" | "rag" | "refusal";

const BADGE_BY_PATH: Record<RoutePath, BadgeKind> = {
  RuleConclusive: "rule",
  RuleSupportiveHedged: "rule",
  RagGenerated: "rag",
  RagNoGeneration: "rag",
  Refusal: "refusal",
};

export function badgeKind(path: RoutePath): BadgeKind {
  return BADGE_BY_PATH[path];
}

export function badgeText(trace: Trace): string {
  return trace.hedged ? `${trace.path} · hedged` : trace.path;
}

export interface Weights {
  w_text: number;
  w_meta: number;
  w_vec: number;
}

export function weightSum(w: Weights): number {
  return w.w_text + w.w_meta + w.w_vec;
}

export function weightsValid(w: Weights): boolean {
  const each = [w.w_text, w.w_meta, w.w_vec].every((x) => x >= 0 && x <= 1);
  return each && Math.abs(weightSum(w) - 1.0) <= 1e-9;
}

export function normalizedWeights(w: Weights): Weights {
  const sum = weightSum(w);
  if (sum <= 0) {
    return { w_text: 1 / 3, w_meta: 1 / 3, w_vec: 1 / 3 };
  }
  // round to 4 decimals, give the rounding remainder to w_text so the
  // result sums to exactly 1 and survives server-side validation
  const meta = Math.round((w.w_meta / sum) * 10000) / 10000;
  const vec = Math.round((w.w_vec / sum) * 10000) / 10000;
  const text = Math.round((1 - meta - vec) * 10000) / 10000;
  return { w_text: text, w_meta: meta, w_vec: vec };
}

/** Apply is blocked client-side when a Hybrid config carries invalid weights. */
export function canApply(config: ConfigDocument): boolean {
  if (config.retrieval.k < 1) return false;
  if (config.retrieval.method !== "Hybrid") return true;
  return weightsValid(config.retrieval);
}

export function scoreBarWidth(component: number): string {
  const clamped = Math.max(0, Math.min(1, component));
  return `${Math.round(clamped * 100)}%`;
}

/** Split an answer into [text, isUngrounded] segments for <mark> rendering. */
export function highlightSegments(
  answer: string,
  spans: string[],
): Array<[string, boolean]> {
  const segments: Array<[string, boolean]> = [];
  let rest = answer;
  while (rest.length > 0) {
    let earliest = -1;
    let which = "";
    for (const span of spans) {
      if (!span) continue;
      const at = rest.toLowerCase().indexOf(span.toLowerCase());
      if (at >= 0 && (earliest < 0 || at < earliest)) {
        earliest = at;
        which = span;
      }
    }
    if (earliest < 0) {
      segments.push([rest, false]);
      break;
    }
    if (earliest > 0) segments.push([rest.slice(0, earliest), false]);
    segments.push([rest.slice(earliest, earliest + which.length), true]);
    rest = rest.slice(earliest + which.length);
  }
  return segments;
}

export function defaultConfig(): ConfigDocument {
  return {
    retrieval: { method: "Hybrid", w_text: 0.5, w_meta: 0.3, w_vec: 0.2, k: 3 },
    generation: {
      mode: "StandardPrompt",
      temperature: 0,
      max_context_chars: 2000,
      backend_id: "mock",
    },
    invocation_policy: "OnNoneFound",
    nlu_enabled: true,
  };
}

export function maxControlConfig(): ConfigDocument {
  const config = defaultConfig();
  config.retrieval.method = "MetadataOnly";
  config.generation.mode = "NoGeneration";
  return config;
}
