// Wire types mirroring docs/api.md. The console renders these verbatim and
// computes no scores or paths of its own.

export type RoutePath =
  | "RuleConclusive"
  | "RuleSupportiveHedged"
  | "RagGenerated"
  | "RagNoGeneration"
  | "Refusal";

export type Strength = "Conclusive" | "Supportive" | "None";

export type Constraint = [string, string];

export interface MatchReport {
  strength: Strength;
  sheet: string | null;
  satisfied: Constraint[];
  unverifiable: Constraint[];
  contradicted: Constraint[];
}

export interface RetrievedDoc {
  id: string;
  score: number;
  components: { text: number; meta: number; vec: number };
  matched_fields: string[];
}

export interface PromptView {
  template_id: string;
  system_instruction: string;
  context_blocks: [string, string][];
  user_query: string;
}

export interface GroundingReport {
  grounded: boolean;
  ungrounded_spans: string[];
}

export interface Trace {
  turn_id: number;
  path: RoutePath;
  question_kind: string;
  hedged: boolean;
  match: MatchReport;
  retrieved: RetrievedDoc[];
  prompt: PromptView | null;
  grounding: GroundingReport | null;
  config_snapshot: ConfigDocument;
  latency_ms: number;
  error: string | null;
}

export interface ChatResponse {
  session_id: string;
  answer: string;
  trace: Trace;
}

export type RetrievalMethod =
  | "MetadataOnly"
  | "FullText"
  | "Semantic"
  | "Vector"
  | "Hybrid";

export type GenerationMode = "NoGeneration" | "DynamicPrompt" | "StandardPrompt";

export type InvocationPolicy = "OnNotConclusive" | "OnNoneFound";

export interface ConfigDocument {
  retrieval: {
    method: RetrievalMethod;
    w_text: number;
    w_meta: number;
    w_vec: number;
    k: number;
  };
  generation: {
    mode: GenerationMode;
    temperature: number;
    max_context_chars: number;
    backend_id: string;
  };
  invocation_policy: InvocationPolicy;
  nlu_enabled: boolean;
  refusal_text?: string;
}

export interface ControlLevel {
  ordinal: number;
  label: string;
}

export interface AnalyticsSummary {
  window: { from: number | null; to: number | null };
  total_turns: number;
  turns_by_path: Record<string, number>;
  hedged_answers: number;
  refusals: number;
  grounding_violations: number;
  ratings: Record<"good" | "bad", Record<"client_editor" | "end_user", number>>;
}

export interface ApiError {
  error: string;
  detail: string;
}
