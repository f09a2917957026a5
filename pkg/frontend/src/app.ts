// Operator console wiring. One active session per tab; answers render only
// from server responses (no optimistic UI); analytics refresh by polling.

import { ApiClient, ApiClientError } from "./api.js";
import {
  badgeKind,
  badgeText,
  canApply,
  highlightSegments,
  normalizedWeights,
  scoreBarWidth,
  weightSum,
  weightsValid,
} from "./controls.js";
import type { ChatResponse, ConfigDocument } from "./types.js";

const api = new ApiClient("");
let sessionId: string | undefined;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function make(tag: string, cls?: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  if (cls) node.className = cls;
  if (text !== undefined) node.textContent = text;
  return node;
}

// --- chat pane -------------------------------------------------------------

function renderAnswer(turn: ChatResponse): void {
  const log = el<HTMLDivElement>("chat-log");
  const entry = make("div", "turn");
  const badge = make("span", `badge badge-${badgeKind(turn.trace.path)}`,
    badgeText(turn.trace));
  const head = make("div", "turn-head");
  head.appendChild(badge);
  head.appendChild(make("span", "kind", turn.trace.question_kind));
  entry.appendChild(head);

  const answer = make("div", "answer");
  const spans = turn.trace.grounding?.ungrounded_spans ?? [];
  for (const [text, ungrounded] of highlightSegments(turn.answer, spans)) {
    if (ungrounded) {
      answer.appendChild(make("mark", "ungrounded", text));
    } else {
      answer.appendChild(document.createTextNode(text));
    }
  }
  entry.appendChild(answer);
  entry.appendChild(renderTraceInspector(turn));
  log.appendChild(entry);
  log.scrollTop = log.scrollHeight;
}

function constraintList(label: string, items: [string, string][]): HTMLElement {
  const wrap = make("div", "constraints");
  wrap.appendChild(make("span", "constraints-label", label));
  if (items.length === 0) {
    wrap.appendChild(make("span", "constraint none", "–"));
  }
  for (const [slot, expected] of items) {
    wrap.appendChild(make("span", "constraint", `${slot} ${expected}`));
  }
  return wrap;
}

function renderTraceInspector(turn: ChatResponse): HTMLElement {
  const trace = turn.trace;
  const details = make("details", "trace") as HTMLDetailsElement;
  details.appendChild(make("summary", "", `turn ${trace.turn_id} · trace`));

  const match = make("div", "trace-section");
  match.appendChild(make("h4", "", `match: ${trace.match.strength}` +
    (trace.match.sheet ? ` (${trace.match.sheet})` : "")));
  match.appendChild(constraintList("satisfied", trace.match.satisfied));
  match.appendChild(constraintList("unverifiable", trace.match.unverifiable));
  match.appendChild(constraintList("contradicted", trace.match.contradicted));
  details.appendChild(match);

  if (trace.retrieved.length > 0) {
    const docs = make("div", "trace-section");
    docs.appendChild(make("h4", "", "retrieved"));
    for (const doc of trace.retrieved) {
      const row = make("div", "doc-row");
      row.appendChild(make("span", "doc-id", `${doc.id} (${doc.score.toFixed(3)})`));
      const bars = make("div", "bars");
      for (const signal of ["text", "meta", "vec"] as const) {
        const bar = make("div", `bar bar-${signal}`);
        const fill = make("div", "bar-fill");
        fill.style.width = scoreBarWidth(doc.components[signal]);
        fill.title = `${signal}=${doc.components[signal].toFixed(3)}`;
        bar.appendChild(fill);
        bars.appendChild(bar);
      }
      row.appendChild(bars);
      const annotate = make("button", "annotate", "annotate") as HTMLButtonElement;
      annotate.addEventListener("click", () => {
        const key = window.prompt(`annotation key for ${doc.id}`, "intent");
        if (!key) return;
        const value = window.prompt(`value for @${key}`);
        if (value === null) return;
        api.setToken(el<HTMLInputElement>("token").value.trim());
        api.annotateDocument(doc.id, key, value)
          .then((ack) => {
            annotate.replaceWith(make("span", "rated",
              `@${key} set (rev ${ack.revision}); reindex to apply`));
          })
          .catch((error) => showError(error));
      });
      row.appendChild(annotate);
      docs.appendChild(row);
    }
    details.appendChild(docs);
  }

  if (trace.prompt) {
    const section = make("div", "trace-section");
    section.appendChild(make("h4", "", `prompt (${trace.prompt.template_id})`));
    const rendered = trace.prompt.system_instruction
      .replace("{context}", trace.prompt.context_blocks
        .map(([id, excerpt]) => `[${id}]\n${excerpt}`).join("\n\n"))
      .replace("{query}", trace.prompt.user_query);
    section.appendChild(make("pre", "prompt-text", rendered));
    details.appendChild(section);
  }

  if (trace.grounding) {
    const section = make("div", "trace-section");
    section.appendChild(make("h4", "",
      trace.grounding.grounded ? "grounded" : "ungrounded spans"));
    for (const span of trace.grounding.ungrounded_spans) {
      section.appendChild(make("mark", "ungrounded", span));
    }
    details.appendChild(section);
  }

  if (trace.error) {
    details.appendChild(make("div", "trace-error", trace.error));
  }

  const rating = make("div", "rating");
  for (const verdict of ["good", "bad"] as const) {
    const button = make("button", `rate rate-${verdict}`, verdict) as HTMLButtonElement;
    button.addEventListener("click", () => {
      api.postRating(turn.session_id, trace.turn_id, verdict)
        .then(() => {
          rating.replaceChildren(make("span", "rated", `rated ${verdict}`));
          refreshAnalytics();
        })
        .catch((error) => showError(error));
    });
    rating.appendChild(button);
  }
  details.appendChild(rating);
  return details;
}

function sendMessage(): void {
  const input = el<HTMLTextAreaElement>("chat-input");
  const message = input.value.trim();
  if (!message) return;
  const button = el<HTMLButtonElement>("chat-send");
  button.disabled = true;
  const log = el<HTMLDivElement>("chat-log");
  const mine = make("div", "turn user");
  mine.appendChild(make("div", "answer", message));
  log.appendChild(mine);
  api.chat(message, sessionId)
    .then((turn) => {
      sessionId = turn.session_id;
      input.value = "";
      renderAnswer(turn);
    })
    .catch((error) => showError(error))
    .finally(() => {
      button.disabled = false;
    });
}

// --- control panel -----------------------------------------------------------

function readConfigForm(): ConfigDocument {
  return {
    retrieval: {
      method: el<HTMLSelectElement>("method").value as ConfigDocument["retrieval"]["method"],
      w_text: Number(el<HTMLInputElement>("w-text").value),
      w_meta: Number(el<HTMLInputElement>("w-meta").value),
      w_vec: Number(el<HTMLInputElement>("w-vec").value),
      k: Number(el<HTMLInputElement>("top-k").value),
    },
    generation: {
      mode: el<HTMLSelectElement>("mode").value as ConfigDocument["generation"]["mode"],
      temperature: 0,
      max_context_chars: 2000,
      backend_id: el<HTMLInputElement>("backend-id").value || "mock",
    },
    invocation_policy: el<HTMLSelectElement>("policy")
      .value as ConfigDocument["invocation_policy"],
    nlu_enabled: el<HTMLInputElement>("nlu-enabled").checked,
  };
}

function writeConfigForm(config: ConfigDocument): void {
  el<HTMLSelectElement>("method").value = config.retrieval.method;
  el<HTMLInputElement>("w-text").value = String(config.retrieval.w_text);
  el<HTMLInputElement>("w-meta").value = String(config.retrieval.w_meta);
  el<HTMLInputElement>("w-vec").value = String(config.retrieval.w_vec);
  el<HTMLInputElement>("top-k").value = String(config.retrieval.k);
  el<HTMLSelectElement>("mode").value = config.generation.mode;
  el<HTMLInputElement>("backend-id").value = config.generation.backend_id;
  el<HTMLSelectElement>("policy").value = config.invocation_policy;
  el<HTMLInputElement>("nlu-enabled").checked = config.nlu_enabled;
  refreshWeightState();
}

function refreshWeightState(): void {
  const config = readConfigForm();
  const weights = config.retrieval;
  const sum = weightSum(weights);
  const normalized = normalizedWeights(weights);
  const hybrid = config.retrieval.method === "Hybrid";
  const note = el<HTMLSpanElement>("weight-note");
  if (!hybrid) {
    note.textContent = "weights apply to Hybrid only";
    note.className = "weight-note";
  } else if (weightsValid(weights)) {
    note.textContent = `sum = ${sum.toFixed(2)} ✓`;
    note.className = "weight-note ok";
  } else {
    note.textContent = `sum = ${sum.toFixed(2)} ✗ → normalized ` +
      `${normalized.w_text}/${normalized.w_meta}/${normalized.w_vec}`;
    note.className = "weight-note bad";
  }
  el<HTMLButtonElement>("config-apply").disabled = !canApply(config);
}

function applyConfig(): void {
  const config = readConfigForm();
  if (!canApply(config)) return; // blocked client-side
  api.setToken(el<HTMLInputElement>("token").value.trim());
  api.putConfig(config)
    .then((level) => {
      // the label shown is the service's response, verbatim
      el<HTMLDivElement>("control-label").textContent = level.label;
      el<HTMLDivElement>("control-ordinal").textContent = `level ${level.ordinal}`;
    })
    .catch((error) => showError(error));
}

// --- analytics -----------------------------------------------------------------

function refreshAnalytics(): void {
  api.getAnalytics()
    .then((summary) => {
      const parts = Object.entries(summary.turns_by_path)
        .filter(([, count]) => count > 0)
        .map(([path, count]) => `${path}: ${count}`);
      el<HTMLSpanElement>("analytics-paths").textContent =
        parts.length ? parts.join(" · ") : "no turns yet";
      const ratings = summary.ratings;
      el<HTMLSpanElement>("analytics-ratings").textContent =
        `ratings good ${ratings.good.client_editor + ratings.good.end_user} / ` +
        `bad ${ratings.bad.client_editor + ratings.bad.end_user}` +
        ` · hedged ${summary.hedged_answers}` +
        ` · violations ${summary.grounding_violations}`;
    })
    .catch(() => {
      el<HTMLSpanElement>("analytics-paths").textContent = "analytics unavailable";
    });
}

function showError(error: unknown): void {
  const box = el<HTMLDivElement>("error-box");
  if (error instanceof ApiClientError) {
    box.textContent = `${error.label}: ${error.message}`;
  } else {
    box.textContent = String(error);
  }
  box.classList.add("visible");
  setTimeout(() => box.classList.remove("visible"), 6000);
}

function init(): void {
  el<HTMLButtonElement>("chat-send").addEventListener("click", sendMessage);
  el<HTMLTextAreaElement>("chat-input").addEventListener("keydown", (event) => {
    if (event.key === "Enter" && !event.shiftKey) {
      event.preventDefault();
      sendMessage();
    }
  });
  el<HTMLButtonElement>("config-apply").addEventListener("click", applyConfig);
  el<HTMLButtonElement>("weights-normalize").addEventListener("click", () => {
    const weights = normalizedWeights(readConfigForm().retrieval);
    el<HTMLInputElement>("w-text").value = String(weights.w_text);
    el<HTMLInputElement>("w-meta").value = String(weights.w_meta);
    el<HTMLInputElement>("w-vec").value = String(weights.w_vec);
    refreshWeightState();
  });
  for (const id of ["method", "w-text", "w-meta", "w-vec", "top-k"]) {
    el(id).addEventListener("input", refreshWeightState);
  }
  el<HTMLButtonElement>("session-reset").addEventListener("click", () => {
    sessionId = undefined;
    el<HTMLDivElement>("chat-log").replaceChildren();
  });

  api.getConfig()
    .then((current) => {
      writeConfigForm(current.config);
      el<HTMLDivElement>("control-label").textContent = current.label;
      el<HTMLDivElement>("control-ordinal").textContent = `level ${current.ordinal}`;
    })
    .catch((error) => showError(error));
  refreshAnalytics();
  setInterval(refreshAnalytics, 5000);
}

document.addEventListener("DOMContentLoaded", init);
