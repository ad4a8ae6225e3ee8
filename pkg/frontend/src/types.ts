export type QueryType = "item" | "attribute" | "ipa";

export interface SlateItem {
  item: string;
  meta: Record<string, unknown>;
}

export interface QueryBody {
  type: QueryType;
  slate: string[];
  tag: string | null;
  items?: SlateItem[];
  prompt?: string;
}

export interface Recommendation {
  item: string;
  score: number;
  meta: Record<string, unknown>;
}

export interface BeliefSummary {
  kind: "particles" | "gaussian";
  mean: number[];
  n: number;
  cosine_to?: number;
}

export interface HistoryEntry {
  query: { type: QueryType; slate: string[]; tag: string | null };
  response: { choice: string | null; direction: number | null };
}

export interface Snapshot {
  session_id: string;
  query_type: QueryType;
  history: HistoryEntry[];
  belief: BeliefSummary;
  recommendations: Recommendation[];
  pending_query: QueryBody | null;
}

export interface SessionConfig {
  query_type: QueryType;
  af: string;
  optimizer: string;
  gamma: number;
  seed: number;
}

export interface AnswerBody {
  choice: string | null;
  direction: number | null;
}

export interface ApiError {
  error: string;
  message: string;
  status: number;
}
